//! Scale penalty, cosine window, query selection and top-k box averaging on a
//! hand-made response.

use siamcar::bbox::BBox;
use siamcar::tracker::{grid_to_image, hann_window, penalty, select_query, topk_average, GridPos};
use siamcar::Tensor;

fn main() -> anyhow::Result<()> {
    let size = 9;
    println!("cell (4, 4) sits at {:?} in a 128px search region", grid_to_image(4, 4, size, 8, 128));
    println!("penalty for doubling the size: {:.4}", penalty((40.0, 60.0), (20.0, 30.0), 0.04));

    // a strong off-center peak and a weaker central one
    let mut cls = Tensor::full([size, size], 0.05);
    cls.data_mut()[2 * size + 7] = 0.95;
    cls.data_mut()[4 * size + 4] = 0.7;
    let cen = Tensor::full([size, size], 1.0);
    let pen = Tensor::full([size, size], 1.0);
    let window = hann_window(size);
    for lambda_d in [0.0, 0.4, 0.9] {
        let q = select_query(&cls, &cen, &pen, &window, lambda_d)?;
        println!("lambda_d {lambda_d}: query at row {}, col {}", q.row, q.col);
    }

    let boxes: Vec<BBox> = (0..size * size)
        .map(|i| {
            let (x, y) = grid_to_image(i % size, i / size, size, 8, 128);
            BBox::from_center_size(x, y, 20.0 + (i % 3) as f64, 30.0)
        })
        .collect();
    let b = topk_average(GridPos { row: 4, col: 4 }, &cls, &boxes, 8, 3)?;
    println!("top-3 average around the center: {b:?}");
    Ok(())
}
