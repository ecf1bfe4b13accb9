//! Builds an inductive trace for a cycle question and shows both training
//! encodings: one duplicated sequence and the equivalent split sequences.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scratchlab::scratchpad::*;
use scratchlab::tasks::{gen_cycle, Tokens, Vocab};

fn main() -> anyhow::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = gen_cycle(2, None, &mut rng)?;
    let question = g.to_sample().question;
    let states = inductive_cycle_states(&g)?;
    println!("question {question}");
    println!("states   {}", Tokens::join(&states, " | "));
    println!("dfs      {}", dfs_scratchpad(&g)?);

    let vocab = Vocab::graphs();
    let opts = EncodeOptions::default();
    let dup = encode_duplicated(&vocab, &question, &states, &opts)?;
    println!("\nduplicated: {} tokens, {} loss targets", dup.len(), dup.target_count());
    println!("  group     {:?}", dup.group);
    println!("  positions {:?}", dup.positions);

    let split = encode_split(&vocab, &question, &states, &opts)?;
    println!("\nsplit: {} sequences", split.len());
    for (i, s) in split.iter().enumerate() {
        let text = vocab.decode(&s.tokens)?;
        println!("  {i}: {} ({} targets)", text.0.join(" "), s.target_count());
    }
    Ok(())
}
