//! Overlapping tile grids and feathered compositing: split an image, run a
//! per-tile operation, and stitch it back without seams.

use msbd::image_ops::{alpha_composite, feather_weights, TileGrid};
use msbd::ImageBuffer;

fn main() -> anyhow::Result<()> {
    let wide = TileGrid::new(3000, 2000, 768, 128)?;
    println!(
        "3000x2000 with 768/128 tiles: x {:?}, y {:?}",
        wide.x_offsets(),
        wide.y_offsets()
    );

    let image = ImageBuffer::from_fn(100, 70, 3, |c, y, x| ((x * 7 + y * 3 + c * 11) % 50) as f64 / 50.0);
    let grid = TileGrid::new(100, 70, 32, 8)?;
    let weights = feather_weights(&grid);
    println!("{} tiles of {}x{}", grid.len(), grid.tile_w(), grid.tile_h());

    let tiles = grid.split(&image)?;
    let back = alpha_composite(&tiles, &grid, &weights)?;
    println!("split + composite error: {:.2e}", back.max_abs_diff(&image)?);

    // Brighten each tile by a different amount; the feathered blend turns
    // the per-tile offsets into smooth ramps.
    let shifted: Vec<ImageBuffer> = tiles
        .iter()
        .enumerate()
        .map(|(i, t)| t.map(|v| v + 0.01 * i as f64))
        .collect();
    let blended = alpha_composite(&shifted, &grid, &weights)?;
    let row: Vec<String> = (0..100)
        .step_by(10)
        .map(|x| format!("{:.3}", blended.get(0, 35, x) - image.get(0, 35, x)))
        .collect();
    println!("offset along row 35: {}", row.join(" "));
    Ok(())
}
