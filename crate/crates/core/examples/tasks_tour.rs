//! Draws one sample from each task family and checks it against its oracle.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scratchlab::tasks::*;

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);

    let cycle = gen_cycle(4, None, &mut rng)?;
    println!("cycle      {}", cycle.to_sample().question);
    println!("  label {} distance {:?}", connectivity_oracle(&cycle), distance_oracle(&cycle));

    let three = gen_three_cycle(3, &mut rng)?;
    println!("three-cycle {}", three.to_sample().question);
    println!("  label {}", connectivity_oracle(&three));

    let random = gen_random_graph(24, 24, &mut rng)?;
    println!(
        "random     label {} degree shortcut {}",
        connectivity_oracle(&random),
        degree_shortcut(&random)
    );

    let parity = gen_parity(5, 12, &mut rng)?;
    println!("parity     {} -> {}", parity.question, parity.answer);
    println!("  oracle {}", parity_oracle(&parity.question)?);

    let add = gen_addition(4, 3, 8, AdditionFormat::Spaces, &mut rng)?;
    println!("addition   {} -> {}", add.question, add.answer);
    println!("  oracle {}", addition_oracle(&add.question)?);
    Ok(())
}
