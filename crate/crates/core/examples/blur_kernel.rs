//! Prints the color critic's blur kernel: total mass and the central taps.

use photoenhance::imaging::make_blur_kernel;

fn main() -> photoenhance::Result<()> {
    let k = make_blur_kernel(10, 0.053, 3.0)?;
    println!(
        "radius {} ({}x{} taps), weight sum {:.5}",
        k.radius(),
        k.side(),
        k.side(),
        k.sum()
    );
    for l in -2..=2 {
        let row: Vec<String> = (-2..=2).map(|c| format!("{:.5}", k.weight(l, c))).collect();
        println!("  {}", row.join(" "));
    }
    Ok(())
}
