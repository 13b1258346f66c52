//! Compares the hand-written backward pass with central finite differences
//! on a seeded random scene, with the specular gate on and off.
//!
//! cargo run --release --example gradient_check -- [surfels] [seed]

use rtsplat::gradcheck::{finite_diff_check, random_problem, GradCheckOptions};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let surfels = args.next().map(|s| s.parse()).transpose()?.unwrap_or(20);
    let seed = args.next().map(|s| s.parse()).transpose()?.unwrap_or(1);
    let opts = GradCheckOptions {
        max_per_group: Some(40),
        ..Default::default()
    };
    let mut ok = true;
    for k in [4.0, 0.0] {
        let (scene, camera, objective) = random_problem(seed, surfels, 16, k)?;
        let report = finite_diff_check(&scene, &camera, &objective, &opts)?;
        println!("gate k = {k}");
        println!("{}", report.to_table());
        ok &= report.pass();
    }
    println!("{}", if ok { "all groups pass" } else { "some groups FAIL" });
    Ok(())
}
