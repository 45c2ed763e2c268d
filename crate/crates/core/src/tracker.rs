//! Tracking phase: scale-change penalty, cosine-window re-ranking, top-k
//! neighborhood box averaging and the frame-to-frame state update.

use std::sync::Arc;

use crate::bbox::BBox;
use crate::config::{write_key_values, KeyValues};
use crate::error::{Error, Result};
use crate::image::{channel_means, context_side, crop_resize};
use crate::loss::sigmoid;
use crate::model::SiamCarNet;
use crate::targets::Grid;
use crate::tensor::{softmax2, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerHyper {
    /// Cosine-window influence in `[0, 1]`.
    pub lambda_d: f64,
    pub penalty_k: f64,
    /// Neighbors of the query cell considered for box averaging: 4, or
    /// `(2r + 1)² - 1` for a square neighborhood of radius `r`.
    pub n_neighbors: usize,
    pub top_k: usize,
    /// Size smoothing in `[0, 1]`; 0 keeps the initial size forever.
    pub gamma: f64,
}

impl Default for TrackerHyper {
    fn default() -> Self {
        TrackerHyper {
            lambda_d: 0.4,
            penalty_k: 0.04,
            n_neighbors: 8,
            top_k: 3,
            gamma: 0.3,
        }
    }
}

impl TrackerHyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..=1.0).contains(&self.lambda_d) {
            return bad(format!("lambda_d {} outside [0, 1]", self.lambda_d));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !(self.penalty_k >= 0.0 && self.penalty_k.is_finite()) {
            return bad(format!("penalty_k {} must be non-negative", self.penalty_k));
        }
        neighbor_radius(self.n_neighbors)?;
        if self.top_k == 0 || self.top_k > self.n_neighbors + 1 {
            return bad(format!(
                "top_k {} must be in 1..={}",
                self.top_k,
                self.n_neighbors + 1
            ));
        }
        Ok(())
    }
}

/// Tracker settings as read from a `key=value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub hyper: TrackerHyper,
    pub template_size: usize,
    pub search_size: usize,
    pub stride: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            hyper: TrackerHyper::default(),
            template_size: 64,
            search_size: 128,
            stride: 8,
        }
    }
}

impl TrackerConfig {
    pub fn from_kv(kv: &KeyValues) -> Result<Self> {
        let d = TrackerConfig::default();
        let cfg = TrackerConfig {
            hyper: TrackerHyper {
                lambda_d: kv.get("lambda_d", d.hyper.lambda_d)?,
                penalty_k: kv.get("penalty_k", d.hyper.penalty_k)?,
                n_neighbors: kv.get("n_neighbors", d.hyper.n_neighbors)?,
                top_k: kv.get("top_k", d.hyper.top_k)?,
                gamma: kv.get("gamma", d.hyper.gamma)?,
            },
            template_size: kv.get("template_size", d.template_size)?,
            search_size: kv.get("search_size", d.search_size)?,
            stride: kv.get("stride", d.stride)?,
        };
        cfg.hyper.validate()?;
        Ok(cfg)
    }

    pub fn to_kv(&self) -> String {
        write_key_values([
            ("lambda_d", self.hyper.lambda_d.to_string()),
            ("penalty_k", self.hyper.penalty_k.to_string()),
            ("gamma", self.hyper.gamma.to_string()),
            ("n_neighbors", self.hyper.n_neighbors.to_string()),
            ("top_k", self.hyper.top_k.to_string()),
            ("template_size", self.template_size.to_string()),
            ("search_size", self.search_size.to_string()),
            ("stride", self.stride.to_string()),
        ])
    }
}

/// Search-region pixel position of response cell `(i, j)` (column, row) on a
/// `w`-wide map.
pub fn grid_to_image(i: usize, j: usize, w: usize, stride: usize, search_size: usize) -> (f64, f64) {
    Grid::new(w, stride, search_size).location(i, j)
}

fn padded_scale(w: f64, h: f64) -> f64 {
    context_side(w, h)
}

fn change(r: f64) -> f64 {
    r.max(1.0 / r)
}

/// Scale-change penalty `exp(-k · (r_c · s_c - 1))`, where `r_c` is the change
/// of aspect ratio and `s_c` the change of padded scale, each taken as
/// `max(ratio, 1 / ratio)`.
pub fn penalty(pred_size: (f64, f64), prev_size: (f64, f64), k: f64) -> f64 {
    let rc = change((pred_size.0 / pred_size.1) / (prev_size.0 / prev_size.1));
    let sc = change(padded_scale(pred_size.0, pred_size.1) / padded_scale(prev_size.0, prev_size.1));
    (-k * (rc * sc - 1.0)).exp()
}

/// Outer product of two Hann windows, scaled so its peak is 1.
pub fn hann_window(n: usize) -> Tensor {
    let v: Vec<f64> = if n == 1 {
        vec![1.0]
    } else {
        (0..n)
            .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos())
            .collect()
    };
    let mut win = Tensor::from_fn([n, n], |idx| v[idx / n] * v[idx % n]);
    let peak = win.data().iter().cloned().fold(0.0, f64::max);
    if peak > 0.0 {
        win = win.scale(1.0 / peak);
    }
    win
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridPos {
    pub row: usize,
    pub col: usize,
}

impl GridPos {
    pub fn index(&self, size: usize) -> usize {
        self.row * size + self.col
    }

    pub fn from_index(idx: usize, size: usize) -> Self {
        GridPos {
            row: idx / size,
            col: idx % size,
        }
    }
}

fn square_side(t: &Tensor) -> Result<usize> {
    let s = t.shape();
    let (h, w) = match s {
        [h, w] | [1, h, w] => (*h, *w),
        _ => return Err(Error::shape(format!("expected a single map, got {s:?}"))),
    };
    if h != w {
        return Err(Error::shape(format!("expected a square map, got {h}×{w}")));
    }
    Ok(w)
}

/// Query cell: argmax of `(1 - λ_d) · cls · cen · p + λ_d · H`, ties going to
/// the smallest row-major index.
pub fn select_query(
    cls_fg: &Tensor,
    cen: &Tensor,
    penalties: &Tensor,
    window: &Tensor,
    lambda_d: f64,
) -> Result<GridPos> {
    let size = square_side(cls_fg)?;
    for t in [cen, penalties, window] {
        if square_side(t)? != size {
            return Err(Error::shape("score maps disagree in size"));
        }
    }
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..size * size {
        let score = cls_fg.data()[i] * cen.data()[i] * penalties.data()[i];
        let v = (1.0 - lambda_d) * score + lambda_d * window.data()[i];
        if v > best.1 {
            best = (i, v);
        }
    }
    Ok(GridPos::from_index(best.0, size))
}

fn neighbor_radius(n: usize) -> Result<Option<usize>> {
    if n == 4 {
        return Ok(None);
    }
    let side = ((n + 1) as f64).sqrt().round() as usize;
    if side * side == n + 1 && side % 2 == 1 {
        Ok(Some(side / 2))
    } else {
        Err(Error::Config(format!(
            "n_neighbors must be 4 or (2r+1)^2 - 1, got {n}"
        )))
    }
}

/// The query cell followed by its `n` neighbors (clipped to the map), in
/// row-major order.
pub fn neighborhood(q: GridPos, size: usize, n: usize) -> Result<Vec<GridPos>> {
    let radius = neighbor_radius(n)?;
    let mut out = vec![q];
    let (r, c) = (q.row as isize, q.col as isize);
    let offsets: Vec<(isize, isize)> = match radius {
        None => vec![(-1, 0), (0, -1), (0, 1), (1, 0)],
        Some(rad) => {
            let rad = rad as isize;
            (-rad..=rad)
                .flat_map(|dr| (-rad..=rad).map(move |dc| (dr, dc)))
                .filter(|&d| d != (0, 0))
                .collect()
        }
    };
    for (dr, dc) in offsets {
        let (nr, nc) = (r + dr, c + dc);
        if nr >= 0 && nc >= 0 && (nr as usize) < size && (nc as usize) < size {
            out.push(GridPos {
                row: nr as usize,
                col: nc as usize,
            });
        }
    }
    Ok(out)
}

/// Score-weighted average of the `k` best boxes among `q` and its neighbors.
///
/// Candidates are ranked by score, ties by row-major index. When fewer than
/// `k` candidates exist all of them are used.
pub fn topk_average(
    q: GridPos,
    scores: &Tensor,
    boxes: &[BBox],
    n: usize,
    k: usize,
) -> Result<BBox> {
    let size = square_side(scores)?;
    if boxes.len() != size * size {
        return Err(Error::shape(format!(
            "{} boxes for a {size}×{size} map",
            boxes.len()
        )));
    }
    if k == 0 {
        return Err(Error::Config("top_k must be positive".into()));
    }
    let mut cand: Vec<usize> = neighborhood(q, size, n)?
        .iter()
        .map(|p| p.index(size))
        .collect();
    cand.sort_by(|&a, &b| {
        scores.data()[b]
            .total_cmp(&scores.data()[a])
            .then(a.cmp(&b))
    });
    cand.truncate(k);
    let total: f64 = cand.iter().map(|&i| scores.data()[i]).sum();
    let weight = |i: usize| {
        if total > 0.0 {
            scores.data()[i] / total
        } else {
            1.0 / cand.len() as f64
        }
    };
    let mut out = BBox::new(0.0, 0.0, 0.0, 0.0);
    for &i in &cand {
        let w = weight(i);
        let b = boxes[i];
        out.x0 += w * b.x0;
        out.y0 += w * b.y0;
        out.x1 += w * b.x1;
        out.y1 += w * b.y1;
    }
    Ok(out)
}

/// Per-track state. The template features are computed once at
/// initialization and shared, never modified, by every later state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackerState {
    pub template_feat: Arc<Tensor>,
    pub prev_center: (f64, f64),
    pub prev_size: (f64, f64),
    pub hyper: TrackerHyper,
}

/// What one frame of tracking looked at, in search-region pixels unless noted.
#[derive(Debug, Clone, PartialEq)]
pub struct Localization {
    pub query: GridPos,
    /// Averaged box in search-region coordinates.
    pub crop_box: BBox,
    /// Averaged box mapped back to image coordinates.
    pub image_box: BBox,
    /// Search-region pixels per image pixel.
    pub scale: f64,
}

pub struct Tracker<'a> {
    net: &'a SiamCarNet,
    hyper: TrackerHyper,
    grid: Grid,
    window: Tensor,
}

impl<'a> Tracker<'a> {
    pub fn new(net: &'a SiamCarNet, hyper: TrackerHyper) -> Result<Self> {
        hyper.validate()?;
        let grid = net.grid()?;
        Ok(Tracker {
            net,
            hyper,
            grid,
            window: hann_window(grid.size),
        })
    }

    /// Checks that a tracker config agrees with the network geometry.
    pub fn with_config(net: &'a SiamCarNet, cfg: &TrackerConfig) -> Result<Self> {
        let m = &net.config;
        if (cfg.template_size, cfg.search_size, cfg.stride)
            != (m.template_size, m.search_size, m.stride())
        {
            return Err(Error::Config(format!(
                "tracker geometry {}/{}/{} does not match weights {}/{}/{}",
                cfg.template_size,
                cfg.search_size,
                cfg.stride,
                m.template_size,
                m.search_size,
                m.stride()
            )));
        }
        Tracker::new(net, cfg.hyper)
    }

    pub fn hyper(&self) -> &TrackerHyper {
        &self.hyper
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// Side of the search region in image pixels for a target of this size.
    pub fn search_side(&self, size: (f64, f64)) -> f64 {
        let m = &self.net.config;
        context_side(size.0, size.1) * m.search_size as f64 / m.template_size as f64
    }

    pub fn init_track(&self, image: &Tensor, gt: BBox) -> Result<TrackerState> {
        gt.require_well_formed()?;
        let fill = channel_means(image)?;
        let (w, h) = gt.size();
        let patch = crop_resize(
            image,
            gt.center(),
            context_side(w, h),
            self.net.config.template_size,
            fill,
        )?;
        let feat = self.net.template_features(&patch)?;
        Ok(TrackerState {
            template_feat: Arc::new(feat),
            prev_center: gt.center(),
            prev_size: (w, h),
            hyper: self.hyper,
        })
    }

    pub fn locate(&self, state: &TrackerState, image: &Tensor) -> Result<Localization> {
        let m = &self.net.config;
        let s = m.search_size as f64;
        let side = self.search_side(state.prev_size);
        let scale = s / side;
        let search = crop_resize(image, state.prev_center, side, m.search_size, channel_means(image)?)?;
        let out = self.net.predict(&state.template_feat, &search)?;

        let size = self.grid.size;
        let n = size * size;
        let fg = softmax2(&out.cls)?;
        let cls_fg = Tensor::new(vec![size, size], fg.data()[n..].to_vec())?;
        let cen = out.cen.map(sigmoid).reshape(vec![size, size])?;
        let prev = (state.prev_size.0 * scale, state.prev_size.1 * scale);
        let reg = out.reg.data();
        let mut boxes = Vec::with_capacity(n);
        let mut pen = Vec::with_capacity(n);
        for idx in 0..n {
            let p = GridPos::from_index(idx, size);
            let (x, y) = self.grid.location(p.col, p.row);
            let (l, t, r, b) = (reg[idx], reg[n + idx], reg[2 * n + idx], reg[3 * n + idx]);
            boxes.push(BBox::new(x - l, y - t, x + r, y + b));
            pen.push(penalty((l + r, t + b), prev, self.hyper.penalty_k));
        }
        let penalties = Tensor::new(vec![size, size], pen)?;
        let query = select_query(&cls_fg, &cen, &penalties, &self.window, self.hyper.lambda_d)?;
        let rerank = Tensor::new(
            vec![size, size],
            cls_fg.data().iter().zip(penalties.data()).map(|(c, p)| c * p).collect(),
        )?;
        let crop_box = topk_average(query, &rerank, &boxes, self.hyper.n_neighbors, self.hyper.top_k)?;
        let to_image = |cx: f64, cy: f64| {
            (
                state.prev_center.0 + (cx - s / 2.0) / scale,
                state.prev_center.1 + (cy - s / 2.0) / scale,
            )
        };
        let (x0, y0) = to_image(crop_box.x0, crop_box.y0);
        let (x1, y1) = to_image(crop_box.x1, crop_box.y1);
        Ok(Localization {
            query,
            crop_box,
            image_box: BBox::new(x0, y0, x1, y1),
            scale,
        })
    }

    /// One tracking step. The reported box is centered on the averaged
    /// prediction and uses the smoothed size.
    pub fn track_frame(&self, state: &TrackerState, image: &Tensor) -> Result<(BBox, TrackerState)> {
        let (_, ih, iw) = image.dims3()?;
        let loc = self.locate(state, image)?;
        let (cx, cy) = loc.image_box.center();
        let (pw, ph) = loc.image_box.size();
        let g = self.hyper.gamma;
        let w = ((1.0 - g) * state.prev_size.0 + g * pw).clamp(2.0, iw as f64);
        let h = ((1.0 - g) * state.prev_size.1 + g * ph).clamp(2.0, ih as f64);
        let center = (cx.clamp(0.0, iw as f64), cy.clamp(0.0, ih as f64));
        let next = TrackerState {
            template_feat: Arc::clone(&state.template_feat),
            prev_center: center,
            prev_size: (w, h),
            hyper: state.hyper,
        };
        Ok((BBox::from_center_size(center.0, center.1, w, h), next))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn grid_mapping_examples() {
        assert_eq!(grid_to_image(4, 4, 9, 8, 128), (64.0, 64.0));
        assert_eq!(grid_to_image(0, 0, 9, 8, 128), (32.0, 32.0));
        assert_eq!(grid_to_image(2, 3, 5, 1, 5), (2.5, 3.5));
    }

    #[test]
    fn penalty_examples() {
        assert_eq!(penalty((10.0, 20.0), (10.0, 20.0), 0.04), 1.0);
        let p = penalty((20.0, 40.0), (10.0, 20.0), 0.04);
        assert!((p - (-0.04f64).exp()).abs() < 1e-12);
        assert!((p - 0.9608).abs() < 1e-4);
        assert_eq!(penalty((3.0, 40.0), (10.0, 20.0), 0.0), 1.0);
        let a = penalty((13.0, 7.0), (10.0, 20.0), 0.1);
        assert!(a < 1.0 && a > 0.0);
    }

    #[test]
    fn window_peak_at_center() {
        let w = hann_window(9);
        assert_eq!(w.data()[4 * 9 + 4], 1.0);
        assert_eq!(w.data()[0], 0.0);
        let w = hann_window(8);
        assert!((w.data().iter().cloned().fold(0.0, f64::max) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn query_degenerate_weights() {
        let size = 9;
        let ones = Tensor::full([size, size], 1.0);
        let mut cls = Tensor::zeros([size, size]);
        cls.data_mut()[13] = 1.0;
        let win = hann_window(size);
        assert_eq!(
            select_query(&cls, &ones, &ones, &win, 1.0).unwrap(),
            GridPos { row: 4, col: 4 }
        );
        assert_eq!(
            select_query(&cls, &ones, &ones, &win, 0.0).unwrap(),
            GridPos { row: 1, col: 4 }
        );
        // all-equal scores: first cell wins
        assert_eq!(
            select_query(&ones, &ones, &ones, &ones, 0.0).unwrap(),
            GridPos { row: 0, col: 0 }
        );
    }

    #[test]
    fn topk_examples() {
        let size = 3;
        let same = BBox::new(1.0, 2.0, 5.0, 7.0);
        let scores = Tensor::from_fn([size, size], |i| i as f64 * 0.1);
        let boxes = vec![same; 9];
        let q = GridPos { row: 1, col: 1 };
        assert_eq!(topk_average(q, &scores, &boxes, 8, 3).unwrap(), same);

        let boxes: Vec<BBox> = (0..9).map(|i| BBox::new(i as f64, 0.0, i as f64 + 1.0, 1.0)).collect();
        assert_eq!(topk_average(q, &scores, &boxes, 8, 1).unwrap(), boxes[8]);

        // corner query: 4 candidates, best three are 4, 3, 1
        let q = GridPos { row: 0, col: 0 };
        let b = topk_average(q, &scores, &boxes, 8, 3).unwrap();
        let expect = (0.4 * 4.0 + 0.3 * 3.0 + 0.1 * 1.0) / 0.8;
        assert!((b.x0 - expect).abs() < 1e-12);

        // more requested than available
        let b = topk_average(q, &scores, &boxes, 8, 9).unwrap();
        let expect = (0.4 * 4.0 + 0.3 * 3.0 + 0.1 * 1.0) / 0.8;
        assert!((b.x0 - expect).abs() < 1e-12);
    }

    #[test]
    fn neighborhoods() {
        let q = GridPos { row: 0, col: 0 };
        assert_eq!(neighborhood(q, 9, 8).unwrap().len(), 4);
        assert_eq!(neighborhood(GridPos { row: 4, col: 4 }, 9, 8).unwrap().len(), 9);
        assert_eq!(neighborhood(GridPos { row: 4, col: 4 }, 9, 4).unwrap().len(), 5);
        assert_eq!(neighborhood(GridPos { row: 4, col: 4 }, 9, 24).unwrap().len(), 25);
        assert!(neighborhood(q, 9, 7).is_err());
    }

    #[test]
    fn hyper_validation() {
        assert!(TrackerHyper::default().validate().is_ok());
        let h = TrackerHyper { top_k: 10, ..TrackerHyper::default() };
        assert!(h.validate().is_err());
        let h = TrackerHyper { lambda_d: 1.5, ..TrackerHyper::default() };
        assert!(h.validate().is_err());
    }

    #[test]
    fn config_roundtrip() {
        let cfg = TrackerConfig {
            hyper: TrackerHyper { lambda_d: 0.25, ..TrackerHyper::default() },
            ..TrackerConfig::default()
        };
        let kv = KeyValues::parse(&cfg.to_kv(), "mem").unwrap();
        assert_eq!(TrackerConfig::from_kv(&kv).unwrap(), cfg);
    }

    fn scene(offset: f64) -> (Tensor, BBox) {
        let gt = BBox::from_xywh(60.0 + offset, 70.0, 24.0, 20.0);
        let img = Tensor::from_fn([3, 160, 160], |i| {
            let c = i / (160 * 160);
            let y = (i / 160) % 160;
            let x = i % 160;
            let (xf, yf) = (x as f64 + 0.5, y as f64 + 0.5);
            if xf > gt.x0 && xf < gt.x1 && yf > gt.y0 && yf < gt.y1 {
                [0.9, 0.2, 0.1][c]
            } else {
                0.3 + 0.1 * ((x * 7 + y * 3) % 5) as f64 / 5.0
            }
        });
        (img, gt)
    }

    #[test]
    fn init_and_determinism() {
        let net = SiamCarNet::init(ModelConfig::default(), 5).unwrap();
        let tracker = Tracker::new(&net, TrackerHyper::default()).unwrap();
        let (img, gt) = scene(0.0);
        let a = tracker.init_track(&img, gt).unwrap();
        let b = tracker.init_track(&img, gt).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.prev_center, gt.center());
        assert_eq!(a.prev_size, (24.0, 20.0));
        assert!(tracker.init_track(&img, BBox::new(5.0, 5.0, 5.0, 9.0)).is_err());

        let (frame, _) = scene(2.0);
        let r1 = tracker.track_frame(&a, &frame).unwrap();
        let r2 = tracker.track_frame(&a, &frame).unwrap();
        assert_eq!(r1, r2);
        assert!(Arc::ptr_eq(&r1.1.template_feat, &a.template_feat));
    }

    #[test]
    fn full_window_reports_center_and_frozen_size() {
        let net = SiamCarNet::init(ModelConfig::default(), 5).unwrap();
        let hyper = TrackerHyper { lambda_d: 1.0, gamma: 0.0, top_k: 1, ..TrackerHyper::default() };
        let tracker = Tracker::new(&net, hyper).unwrap();
        let (img, gt) = scene(0.0);
        let mut state = tracker.init_track(&img, gt).unwrap();
        for off in [2.0, 4.0, 6.0] {
            let (frame, _) = scene(off);
            let loc = tracker.locate(&state, &frame).unwrap();
            assert_eq!(loc.query, GridPos { row: 4, col: 4 });
            let (b, next) = tracker.track_frame(&state, &frame).unwrap();
            assert_eq!(b.size(), (24.0, 20.0));
            state = next;
        }
    }

    #[test]
    fn geometry_mismatch_rejected() {
        let net = SiamCarNet::init(ModelConfig::default(), 5).unwrap();
        let cfg = TrackerConfig { search_size: 160, ..TrackerConfig::default() };
        assert!(Tracker::with_config(&net, &cfg).is_err());
    }
}
