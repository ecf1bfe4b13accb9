use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scratchlab::harness::{draw, vocab_for, Example, ScratchpadMode, TaskSpec};
use scratchlab::model::{bind_params, forward_logits, generate_greedy, init_model, sequence_loss, ModelConfig, ParameterStore, SeqInput, Visibility};
use scratchlab::numerics::{Scalar, Tape};
use scratchlab::scratchpad::*;
use scratchlab::tasks::{connectivity_oracle, parse_graph, GraphInstance, Tokens, Vocab};

fn lines(text: &str) -> Vec<&str> {
    text.lines().collect()
}

fn render(states: &[Tokens]) -> Vec<String> {
    states.iter().map(Tokens::render).collect()
}

fn section_graph() -> GraphInstance {
    parse_graph("a>x;n>y;q>a;t>n;y>t;x>q;a?t;").unwrap()
}

#[test]
fn golden_cycle_walks() {
    let g = section_graph();
    assert_eq!(dfs_scratchpad(&g).unwrap().render(), lines(include_str!("golden/dfs_walk.txt"))[0]);
    let states = inductive_cycle_states(&g).unwrap();
    assert_eq!(render(&states), ["a", "x", "q", "a;0"]);
    let full = format!("{START}{}{EOS}", Tokens::join(&states, STATE_SEP).render());
    assert_eq!(full, lines(include_str!("golden/inductive_cycle.txt"))[0]);
    let g = parse_graph("s>m;m>t;t>s;s?t;").unwrap();
    assert_eq!(dfs_scratchpad(&g).unwrap().render(), "s>m>t;1");
}

#[test]
fn golden_three_cycle() {
    let text = lines(include_str!("golden/three_cycle.txt"))[0];
    let g = parse_graph(text).unwrap();
    assert_eq!(scratchlab::tasks::serialize_graph(&g).render(), text);
    assert_eq!(g.query.len(), 3);
    assert_eq!(connectivity_oracle(&g), 1);
}

#[test]
fn golden_parity_states() {
    let q = Tokens::chars("_01_10_0__1_=");
    let states = parity_inductive_states(&q, 12).unwrap();
    assert_eq!(render(&states), lines(include_str!("golden/parity_states.txt")));
    assert_eq!(extract_answer(states.last().unwrap(), AnswerRule::After(",")).unwrap().render(), "1");
}

#[test]
fn golden_addition_traces() {
    let want = lines(include_str!("golden/addition_spaces.txt"));
    let (prelude, states) = addition_states_spaces_with_buffer(&Tokens::chars("94_+_3__1="), 4, "$xgwg6").unwrap();
    assert_eq!(prelude.render(), "$xgwg6");
    assert_eq!(render(&states), &want[..3]);
    let ans = extract_answer(states.last().unwrap(), AnswerRule::DigitsBeforeDollar).unwrap();
    assert_eq!(format!("answer={}", ans.render()), want[3]);

    let want = lines(include_str!("golden/addition_shift.txt"));
    let (_, states) = addition_states_shift_with_buffer(&Tokens::chars("fs$46+ih$98="), 4, "$kckn").unwrap();
    assert_eq!(render(&states), &want[..3]);
    let ans = extract_answer(states.last().unwrap(), AnswerRule::DigitsBeforeDollar).unwrap();
    assert_eq!(format!("answer={}", ans.render()), want[3]);
}

fn opts() -> EncodeOptions {
    EncodeOptions::default()
}

#[test]
fn duplicated_layout_for_two_states() {
    let vocab = Vocab::characters();
    let q = Tokens::chars("ab=");
    let e = encode_duplicated(&vocab, &q, &[Tokens::chars("a"), Tokens::chars("b")], &opts()).unwrap();
    // Q(3) START | a # | a # b <EOS>
    assert_eq!(e.group, [0, 0, 0, 0, 1, 1, 2, 2, 2, 2]);
    assert_eq!(e.positions, [0, 1, 2, 3, 4, 5, 4, 5, 6, 7]);
    assert_eq!(e.loss_mask, [true, true, true, true, true, true, false, false, true, true]);
    let text: Vec<&str> = e.tokens.iter().map(|&t| vocab.token(t).unwrap()).collect();
    assert_eq!(text, ["a", "b", "=", START, "a", "#", "a", "#", "b", EOS]);
}

#[test]
fn single_state_encodings_coincide() {
    let vocab = Vocab::characters();
    let q = Tokens::chars("1_0=");
    let s = [Tokens::chars("1")];
    let d = encode_duplicated(&vocab, &q, &s, &opts()).unwrap();
    let split = encode_split(&vocab, &q, &s, &opts()).unwrap();
    assert_eq!(split.len(), 1);
    assert_eq!(split[0].tokens, d.tokens);
    assert_eq!(split[0].loss_mask, d.loss_mask);
}

#[test]
fn split_of_the_cycle_example() {
    let vocab = Vocab::graphs();
    let g = section_graph();
    let q = scratchlab::tasks::serialize_graph(&g);
    let states = inductive_cycle_states(&g).unwrap();
    let no_q = EncodeOptions { loss_on_question: false, ..opts() };
    let split = encode_split(&vocab, &q, &states, &no_q).unwrap();
    assert_eq!(split.len(), 4);
    let last = vocab.decode(&split[3].tokens).unwrap().render();
    assert!(last.ends_with("a;0<EOS>"), "{last}");
    // Each state is a loss target exactly once across the split sequences.
    let targets: Vec<String> = split
        .iter()
        .map(|s| {
            let ids: Vec<usize> = s.tokens.iter().zip(&s.loss_mask).filter(|(_, &m)| m).map(|(&t, _)| t).collect();
            vocab.decode(&ids).unwrap().render()
        })
        .collect();
    assert_eq!(targets, ["a#", "x#", "q#", "a;0<EOS>"]);
    assert!(encode_split(&vocab, &q, &states, &EncodeOptions { max_context: Some(20), ..opts() }).is_err());
}

fn samples(n: usize, seed: u64) -> Vec<Example> {
    let specs: Vec<TaskSpec> = ["cycle:n=3", "parity:min=1,max=6,d_amb=8", "add_spaces:min=1,max=3,d_amb=4", "add_shift:min=1,max=3,d_amb=4", "half_parity:n=6"]
        .iter()
        .map(|s| s.parse().unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| draw(&specs[i % specs.len()], ScratchpadMode::Inductive, &mut rng).unwrap()).collect()
}

fn spec_of(ex: &Example) -> TaskSpec {
    ex.sample.meta["spec"].as_str().unwrap().parse().unwrap()
}

#[test]
fn visibility_positions_and_masks_hold_exhaustively() {
    for ex in samples(100, 1) {
        let vocab = vocab_for(&spec_of(&ex));
        let o = EncodeOptions { use_start: ex.use_start, ..opts() };
        let e = encode_duplicated(&vocab, &ex.input, &ex.sample.states, &o).unwrap();
        let n = e.len();
        let t = e.group.iter().take_while(|&&g| g == 0).count();
        for i in 0..n {
            for j in 0..n {
                let hidden = j > i || (e.group[j] != 0 && e.group[j] != e.group[i]);
                assert_eq!(e.visible(i, j), !hidden);
            }
            if e.group[i] == 0 {
                assert_eq!(e.positions[i], i);
            } else {
                let first = e.group.iter().position(|&g| g == e.group[i]).unwrap();
                assert_eq!(e.positions[i], t + i - first);
            }
        }
    }
}

fn loss_of<T: Scalar>(params: &ParameterStore<T>, cfg: &ModelConfig, seqs: &[scratchlab::model::TrainSeq]) -> f64 {
    let mut tape = Tape::new();
    let pv = bind_params(&mut tape, params, cfg, false).unwrap();
    let (l, _) = sequence_loss(&mut tape, &pv, cfg, seqs, None).unwrap();
    tape.value(l).data()[0].as_f64()
}

/// Masked loss from 32-bit logits, accumulated in 64-bit.
fn logit_loss(params: &ParameterStore<f32>, cfg: &ModelConfig, seq: &scratchlab::model::TrainSeq) -> f64 {
    let logits = forward_logits(params, cfg, std::slice::from_ref(&seq.input)).unwrap();
    let v = cfg.vocab_size;
    (0..seq.input.len())
        .filter(|&i| seq.loss_mask[i])
        .map(|i| {
            let row: Vec<f64> = logits.data()[i * v..(i + 1) * v].iter().map(|&x| x as f64).collect();
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln() - row[seq.targets[i]]
        })
        .sum()
}

#[test]
fn duplicated_loss_equals_summed_split_losses() {
    let (mut worst32, mut worst64, mut worst_logits) = (0.0f64, 0.0f64, 0.0f64);
    let mut per_vocab: HashMap<usize, (ParameterStore<f32>, ModelConfig)> = HashMap::new();
    for (i, ex) in samples(100, 2).into_iter().enumerate() {
        let vocab = vocab_for(&spec_of(&ex));
        let (p32, cfg) = per_vocab
            .entry(vocab.len())
            .or_insert_with(|| {
                let cfg = ModelConfig::new(2, 2, 16, vocab.len(), 256);
                (init_model(&cfg, 40 + i as u64).unwrap(), cfg)
            })
            .clone();
        let p64: ParameterStore<f64> = p32.cast();
        let o = EncodeOptions { use_start: ex.use_start, loss_on_question: i % 2 == 0, max_context: Some(256) };
        let dup = encode_duplicated(&vocab, &ex.input, &ex.sample.states, &o).unwrap();
        let split = encode_split(&vocab, &ex.input, &ex.sample.states, &o).unwrap();
        let dup_seq = [dup.to_train_seq()];
        let split_seqs: Vec<_> = split.iter().filter(|s| s.target_count() > 0).map(|s| s.to_train_seq()).collect();
        assert_eq!(dup.target_count(), split.iter().map(|s| s.target_count()).sum::<usize>());
        let a32 = loss_of(&p32, &cfg, &dup_seq);
        let b32: f64 = split_seqs.iter().map(|s| loss_of(&p32, &cfg, std::slice::from_ref(s))).sum();
        let a64 = loss_of(&p64, &cfg, &dup_seq);
        let b64: f64 = split_seqs.iter().map(|s| loss_of(&p64, &cfg, std::slice::from_ref(s))).sum();
        // A 32-bit scalar near 300 has an ulp of 3e-5, so the tape loss is
        // compared per target token and the logits-level sum absolutely.
        worst32 = worst32.max((a32 - b32).abs() / dup.target_count() as f64);
        let c32 = logit_loss(&p32, &cfg, &dup_seq[0]);
        let d32: f64 = split_seqs.iter().map(|s| logit_loss(&p32, &cfg, s)).sum();
        worst_logits = worst_logits.max((c32 - d32).abs());
        worst64 = worst64.max((a64 - b64).abs());
    }
    assert!(worst32 <= 1e-5, "32-bit gap per token {worst32}");
    assert!(worst_logits <= 1e-5, "32-bit logits gap {worst_logits}");
    assert!(worst64 <= 1e-10, "64-bit gap {worst64}");
}

/// Random tiny model with the separator and EOS logits boosted so states end.
fn chatty_model(vocab: &Vocab, seed: u64) -> (ParameterStore<f32>, ModelConfig) {
    let cfg = ModelConfig::new(2, 2, 16, vocab.len(), 96);
    let mut p = init_model(&cfg, seed).unwrap();
    let sep = vocab.id(STATE_SEP).unwrap();
    let eos = vocab.eos();
    let v = vocab.len();
    let head = p.get_mut("head.w").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for r in 0..16 {
        head.data_mut()[r * v + sep] = rng.gen_range(-0.06..0.06);
        head.data_mut()[r * v + eos] = rng.gen_range(-0.06..0.02);
    }
    (p, cfg)
}

#[test]
fn masked_and_truncated_decoding_agree() {
    let limits = DecodeLimits { max_states: 6, max_state_len: 6 };
    let mut multi = 0;
    for (i, ex) in samples(100, 3).into_iter().enumerate() {
        let vocab = vocab_for(&spec_of(&ex));
        // Try a few random models per sample until one writes several states.
        for seed in 0..8 {
            let (p, cfg) = chatty_model(&vocab, 1000 * i as u64 + seed);
            let run = |mode| inductive_decode(&p, &cfg, &vocab, &ex.input, ex.use_start, limits, ex.rule, mode).unwrap();
            let (m, t) = (run(DecodeMode::Masked), run(DecodeMode::Truncated));
            assert_eq!(m, t, "sample {i}");
            // Physically truncated oracle: each state continues Q START s_i #.
            if ex.use_start {
                let sep = vocab.id(STATE_SEP).unwrap();
                let mut perm = vocab.encode(&ex.input).unwrap();
                perm.push(vocab.start());
                for w in m.states.windows(2) {
                    let mut ctx = perm.clone();
                    ctx.extend(vocab.encode(&w[0]).unwrap());
                    ctx.push(sep);
                    let stop = [sep, vocab.eos()];
                    let out = generate_greedy(&p, &cfg, &SeqInput::causal(ctx), &stop, limits.max_state_len + 1).unwrap();
                    assert_eq!(&out[..out.len() - 1], vocab.encode(&w[1]).unwrap().as_slice());
                }
            }
            if m.states.len() >= 2 {
                multi += 1;
                break;
            }
        }
    }
    assert!(multi >= 30, "only {multi} samples produced several states");
}

fn groups_of(s: &SeqInput) -> Vec<usize> {
    match &s.visibility {
        Visibility::Groups(g) => g.clone(),
        _ => vec![0; s.len()],
    }
}

/// Maps (permanent prefix, previous state) to the ground-truth continuation.
fn teacher(examples: &[Example], vocab: &Vocab) -> HashMap<(Vec<usize>, usize, Vec<usize>), Vec<usize>> {
    let sep = vocab.id(STATE_SEP).unwrap();
    let mut table = HashMap::new();
    for ex in examples {
        let mut ids: Vec<Vec<usize>> = ex.sample.states.iter().map(|s| vocab.encode(s).unwrap()).collect();
        let mut perm = vec![];
        if ex.use_start {
            perm = vocab.encode(&ex.input).unwrap();
            perm.push(vocab.start());
            ids.insert(0, vec![]);
        } else {
            ids.insert(0, vocab.encode(&ex.input).unwrap());
        }
        for k in 1..ids.len() {
            let mut next = ids[k].clone();
            next.push(if k + 1 == ids.len() { vocab.eos() } else { sep });
            table.insert((perm.clone(), k - 1 + usize::from(!ex.use_start), ids[k - 1].clone()), next);
        }
    }
    table
}

fn split_context(s: &SeqInput) -> (Vec<usize>, usize, Vec<usize>) {
    let g = groups_of(s);
    let last = *g.iter().max().unwrap();
    let perm: Vec<usize> = s.tokens.iter().zip(&g).filter(|(_, &x)| x == 0).map(|(&t, _)| t).collect();
    if last == 0 {
        return (perm, 0, vec![]);
    }
    let mut prev: Vec<usize> = s.tokens.iter().zip(&g).filter(|(_, &x)| x == last).map(|(&t, _)| t).collect();
    prev.pop();
    (perm, last, prev)
}

#[test]
fn teacher_forced_decoding_reproduces_builder_states() {
    for (k, spec) in ["cycle:n=4", "parity:min=1,max=10,d_amb=12", "add_spaces:min=1,max=4,d_amb=5", "add_shift:min=1,max=4,d_amb=5", "half_parity:n=10"]
        .iter()
        .enumerate()
    {
        let spec: TaskSpec = spec.parse().unwrap();
        let vocab = vocab_for(&spec);
        let mut rng = ChaCha8Rng::seed_from_u64(k as u64);
        let exs: Vec<Example> = (0..200).map(|_| draw(&spec, ScratchpadMode::Inductive, &mut rng).unwrap()).collect();
        let table = teacher(&exs, &vocab);
        let step = |ctxs: &[SeqInput], _: &[usize], _: usize| Ok(ctxs.iter().map(|c| table[&split_context(c)].clone()).collect());
        let questions: Vec<Tokens> = exs.iter().map(|e| e.input.clone()).collect();
        let limits = DecodeLimits { max_states: 64, max_state_len: 64 };
        for mode in [DecodeMode::Masked, DecodeMode::Truncated] {
            let outs = inductive_decode_with(step, &vocab, &questions, exs[0].use_start, limits, exs[0].rule, mode).unwrap();
            let correct = outs.iter().zip(&exs).filter(|(o, e)| o.answer.as_ref() == Some(&e.sample.answer)).count();
            assert_eq!(correct, exs.len(), "{spec}");
            for (o, e) in outs.iter().zip(&exs) {
                assert_eq!(o.states, e.sample.states);
            }
        }
    }
}

#[test]
fn copying_model_fails_at_the_state_limit() {
    let vocab = Vocab::characters();
    let sep = vocab.id(STATE_SEP).unwrap();
    let copy = |ctxs: &[SeqInput], _: &[usize], _: usize| {
        Ok(ctxs
            .iter()
            .map(|c| {
                let (_, _, mut prev) = split_context(c);
                if prev.is_empty() {
                    prev.push(vocab.id("1").unwrap());
                }
                prev.push(sep);
                prev
            })
            .collect())
    };
    let limits = DecodeLimits { max_states: 5, max_state_len: 8 };
    let out = inductive_decode_with(copy, &vocab, &[Tokens::chars("10=")], true, limits, AnswerRule::Whole, DecodeMode::Truncated).unwrap();
    assert_eq!(out[0].states.len(), 5);
    assert!(out[0].answer.is_none() && out[0].failure.is_some());
}

#[test]
fn encodings_export_as_json_lines() {
    let vocab = Vocab::characters();
    let e = encode_duplicated(&vocab, &Tokens::chars("1="), &[Tokens::chars("1")], &opts()).unwrap();
    let mut buf = Vec::new();
    write_encodings_jsonl(&mut buf, &[e.clone(), e]).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert_eq!(text.lines().count(), 2);
    let v: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert_eq!(v["loss_mask"], serde_json::json!([1, 1, 1, 1, 1]));
    assert_eq!(v["group"], serde_json::json!([0, 0, 0, 1, 1]));
}
