//! Central-difference gradient checks for every differentiable primitive and
//! for the full model loss, in 64-bit.

use scratchlab::harness::gradcheck_suite;

fn main() -> anyhow::Result<()> {
    let seed = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(0);
    let lines = gradcheck_suite(seed)?;
    for l in &lines {
        let verdict = if l.passed { "PASS" } else { "FAIL" };
        println!("{:<16} cases={:<3} max_rel_err={:.3e} tol={:.0e} {verdict}", l.name, l.cases, l.max_rel_err, l.tolerance);
    }
    if lines.iter().any(|l| !l.passed) {
        std::process::exit(1);
    }
    Ok(())
}
