//! Exact globality degree of the cycle task for small n, and the per-step
//! degree once a DFS scratchpad breaks the target into local steps.

use num_traits::ToPrimitive;
use scratchlab::globality::*;

fn main() -> anyhow::Result<()> {
    let cfg = SearchConfig { k_max: 3, threshold: 1e-12, ..SearchConfig::default() };
    for n in 2..=3 {
        let report = globality_search(&cycle_label_joint(n)?, &cfg)?;
        println!("cycle n={n}: verdict {:?}", report.verdict);
        for k in &report.per_k {
            println!("  k={} best MI {:.3e} bits at {:?}", k.k, k.best_mi, k.witness);
        }
        println!("  analytic subset-event rate {:.4}", cycle_analytic(n)?.to_f64().unwrap_or(f64::NAN));
    }

    let cfg = SearchConfig { threshold: 0.01, ..cfg };
    let ar = autoregressive_globality(&dfs_steps(2)?, &cfg)?;
    println!("\nDFS scratchpad n=2: overall {:?}", ar.overall);
    for s in &ar.steps {
        println!("  step {:2} H={:.3} k={:?}", s.t, s.entropy, s.k);
    }
    Ok(())
}
