use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::*;
use crate::env::acts::{Act, ActList};
use crate::env::schema::Schema;
use crate::env::world::World;
use crate::env::{DialogueState, ModuleOutput};

fn vocab() -> Vocabulary {
    build_vocabulary(&Schema::default(), 4).unwrap()
}

fn jitter(store: &mut ParamStore, seed: u64, std: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = Normal::new(0.0, std).unwrap();
    for t in &mut store.tensors {
        for x in &mut t.data {
            *x += n.sample(&mut rng);
        }
    }
}

fn random_pair(v: &Vocabulary, rng: &mut ChaCha8Rng) -> (Vec<u32>, Vec<u32>) {
    let sp = v.specials();
    let first_word = sp.first_prefix + sp.module_count;
    let tok = |rng: &mut ChaCha8Rng| v.token(rng.random_range(first_word..v.len() as u32)).to_string();
    let ctx: Vec<String> = (0..rng.random_range(0..8)).map(|_| tok(rng)).collect();
    let mut inp: Vec<String> = (0..rng.random_range(1..6)).map(|_| tok(rng)).collect();
    if rng.random_bool(0.5) {
        inp.push("state".into());
        inp.extend((0..3).map(|_| tok(rng)));
    }
    let mut out: Vec<String> = (0..rng.random_range(1..6)).map(|_| tok(rng)).collect();
    if rng.random_bool(0.5) {
        out.push(inp[0].clone());
    }
    let x = encode_ppn_input(v, &ctx, &inp, &out, rng.random_range(1..=4)).unwrap();
    let mut y: Vec<u32> = (0..rng.random_range(0..5)).map(|_| rng.random_range(0..v.len() as u32)).collect();
    if rng.random_bool(0.3) {
        y.push(x[4]);
    }
    y.push(sp.eos);
    (x, y)
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-5)
}

fn check_gradient(store: &mut ParamStore, grad: &Gradients, f: &dyn Fn(&ParamStore) -> f64, rng: &mut ChaCha8Rng, n: usize) -> f64 {
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let ti = rng.random_range(0..store.tensors.len());
        let oi = rng.random_range(0..store.tensors[ti].len());
        let orig = store.tensors[ti].data[oi];
        store.tensors[ti].data[oi] = orig + h;
        let up = f(store);
        store.tensors[ti].data[oi] = orig - h;
        let down = f(store);
        store.tensors[ti].data[oi] = orig;
        let numeric = (up - down) / (2.0 * h);
        worst = worst.max(rel_err(grad.data[ti][oi], numeric));
    }
    worst
}

#[test]
fn fresh_policy_is_uniform() {
    let v = vocab();
    let p = PolicyModel::new(&v, &ModelConfig::default());
    let x = encode_ppn_input(&v, &["want"], &["want"], &["want"], 1).unwrap();
    let (total, per) = p.sequence_log_prob(&x, &[v.specials().eos]);
    assert_eq!(per.len(), 1);
    assert!((total + (v.len() as f64).ln()).abs() < 1e-12);
}

#[test]
fn step_distributions_normalize() {
    let v = vocab();
    let mut p = PolicyModel::new(&v, &ModelConfig::default());
    jitter(&mut p.store, 1, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..20 {
        let (x, y) = random_pair(&v, &mut rng);
        let (total, per) = p.sequence_log_prob(&x, &y);
        assert!((total - per.iter().sum::<f64>()).abs() < 1e-12);
        for lp in p.step_log_probs(&x, &y) {
            let s: f64 = lp.iter().map(|l| l.exp()).sum();
            assert!((s - 1.0).abs() < 1e-12, "{s}");
        }
    }
}

#[test]
fn policy_gradient_matches_finite_differences() {
    let v = vocab();
    let mut p = PolicyModel::new(&v, &ModelConfig { init_seed: 3, ..Default::default() });
    jitter(&mut p.store, 4, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let (x, y) = random_pair(&v, &mut rng);
        let g = p.log_prob_gradient(&x, &y);
        let sp = p.specials;
        let f = |s: &ParamStore| PolicyModel::from_store(s.clone(), sp).unwrap().sequence_log_prob(&x, &y).0;
        let worst = check_gradient(&mut p.store, &g, &f, &mut rng, 50);
        assert!(worst <= 1e-4, "{worst}");
    }
}

#[test]
fn copy_gradient_through_agreement_matches_finite_differences() {
    let v = vocab();
    let mut p = PolicyModel::new(&v, &ModelConfig { init_seed: 9, ..Default::default() });
    jitter(&mut p.store, 10, 0.3);
    let sp = p.specials;
    let agree = p.store.index("out.agree").unwrap();
    p.store.tensors[agree].data[0] = 0.4;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let (x, _) = random_pair(&v, &mut rng);
        let y = vec![sp.copy, sp.eos];
        let g = p.log_prob_gradient(&x, &y);
        let f = |s: &ParamStore| PolicyModel::from_store(s.clone(), sp).unwrap().sequence_log_prob(&x, &y).0;
        let h = 1e-5;
        let mut s2 = p.store.clone();
        s2.tensors[agree].data[0] += h;
        let up = f(&s2);
        s2.tensors[agree].data[0] -= 2.0 * h;
        let down = f(&s2);
        assert!(rel_err(g.data[agree][0], (up - down) / (2.0 * h)) <= 1e-4);
        let worst = check_gradient(&mut p.store, &g, &f, &mut rng, 50);
        assert!(worst <= 1e-4, "{worst}");
    }
}

#[test]
fn value_gradient_matches_finite_differences() {
    let v = vocab();
    let mut m = ValueModel::new(&v, &ModelConfig { init_seed: 6, ..Default::default() });
    jitter(&mut m.store, 7, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..10 {
        let (x, _) = random_pair(&v, &mut rng);
        let g = m.value_gradient(&x);
        let sp = m.specials;
        let f = |s: &ParamStore| ValueModel::from_store(s.clone(), sp).unwrap().estimate_value(&x);
        let worst = check_gradient(&mut m.store, &g, &f, &mut rng, 50);
        assert!(worst <= 1e-4, "{worst}");
    }
}

#[test]
fn unused_embedding_rows_get_zero_gradient() {
    let v = vocab();
    let mut p = PolicyModel::new(&v, &ModelConfig::default());
    jitter(&mut p.store, 9, 0.3);
    let x = encode_ppn_input(&v, &["want"], &["restaurant"], &["north"], 2).unwrap();
    let y = v.encode(&["south", "<eos>"]).unwrap();
    let g = p.log_prob_gradient(&x, &y);
    let embed = p.store.index("embed").unwrap();
    let unused = v.id("hotel_7_phone").unwrap() as usize;
    let d = p.embed_dim();
    assert!(g.data[embed][unused * d..(unused + 1) * d].iter().all(|&x| x == 0.0));
    let used = v.id("north").unwrap() as usize;
    assert!(g.data[embed][used * d..(used + 1) * d].iter().any(|&x| x != 0.0));
}

#[test]
fn gradient_scales_linearly() {
    let v = vocab();
    let mut p = PolicyModel::new(&v, &ModelConfig::default());
    jitter(&mut p.store, 10, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (x, y) = random_pair(&v, &mut rng);
    let base = p.log_prob_gradient(&x, &y);
    let mut scaled = p.store.zero_grads();
    p.accumulate_log_prob_gradient(&x, &y, -2.5, &mut scaled);
    for (a, b) in base.data.iter().flatten().zip(scaled.data.iter().flatten()) {
        assert!((a * -2.5 - b).abs() <= 1e-12 * (1.0 + b.abs()));
    }
}

#[test]
fn sampling_is_seeded_and_self_consistent() {
    let v = vocab();
    let mut p = PolicyModel::new(&v, &ModelConfig::default());
    jitter(&mut p.store, 12, 0.3);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (x, _) = random_pair(&v, &mut rng);
    for seed in 0..20 {
        let cfg = SampleConfig::default();
        let (y, lp) = p.sample_sequence(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        let (y2, _) = p.sample_sequence(&x, &cfg, &mut ChaCha8Rng::seed_from_u64(seed));
        assert_eq!(y, y2);
        assert!(y.len() <= MAX_OUTPUT_LEN);
        assert!(y.last() == Some(&p.specials.eos) || y.len() == MAX_OUTPUT_LEN);
        assert!((p.sequence_log_prob(&x, &y).0 - lp).abs() < 1e-12);
    }
    let (g, glp) = p.greedy(&x, 10);
    assert!((p.sequence_log_prob(&x, &g).0 - glp).abs() < 1e-12);
    let nucleus = SampleConfig { top_p: 0.5, temperature: 0.7, max_len: 8 };
    let (y, lp) = p.sample_sequence(&x, &nucleus, &mut rng);
    assert!(y.len() <= 8);
    assert!((p.sequence_log_prob(&x, &y).0 - lp).abs() < 1e-12);
}

#[test]
fn zero_head_values_are_zero() {
    let v = vocab();
    let m = ValueModel::new(&v, &ModelConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for _ in 0..5 {
        let (x, _) = random_pair(&v, &mut rng);
        assert_eq!(m.estimate_value(&x), 0.0);
    }
    let p = PolicyModel::new(&v, &ModelConfig::default());
    let from = ValueModel::from_policy_encoder(&p);
    let (x, _) = random_pair(&v, &mut rng);
    assert_eq!(from.estimate_value(&x), 0.0);
    assert_eq!(from.store.get("embed"), p.store.get("embed"));
}

#[test]
fn input_layout_and_caps() {
    let v = vocab();
    let none: [&str; 0] = [];
    let x = encode_ppn_input(&v, &none, &["want"], &["bye"], 1).unwrap();
    assert_eq!(v.decode(&x), ["<bos>", "<m1>", "<sep>", "want", "<sep>", "bye", "<eos>"]);
    let a = encode_ppn_input(&v, &["what"], &["want"], &["bye"], 1).unwrap();
    let b = encode_ppn_input(&v, &["what"], &["want"], &["bye"], 2).unwrap();
    let diff: Vec<usize> = (0..a.len()).filter(|&i| a[i] != b[i]).collect();
    assert_eq!(diff, vec![1]);
    let long: Vec<String> = (0..400).map(|i| if i % 2 == 0 { "want".into() } else { format!("restaurant_{}", i % 30) }).collect();
    let x = encode_ppn_input(&v, &long, &["want"], &["bye"], 3).unwrap();
    assert_eq!(x.len(), MAX_INPUT_LEN);
    let kept = MAX_INPUT_LEN - 7;
    assert_eq!(v.decode(&x[2..2 + kept]), long[long.len() - kept..]);
    match encode_ppn_input(&v, &none, &["want", "zebra"], &["bye"], 1) {
        Err(ModelError::UnknownToken(t)) => assert_eq!(t, "zebra"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn decoding_copy_parse_and_fallback() {
    let v = vocab();
    let w = World::new(Schema::default(), 0).unwrap();
    let sp = v.specials();
    let orig = ModuleOutput::Acts(ActList::new(vec![Act::Bye]));
    let p = decode_output(&w, &v, &[sp.copy, sp.eos], &orig);
    assert_eq!((p.output, p.fallback), (orig.clone(), false));
    let y = encode_target(&v, &["restaurant-area=", "centre"]).unwrap();
    let p = decode_output(&w, &v, &y, &orig);
    assert!(!p.fallback);
    assert_eq!(
        p.output,
        ModuleOutput::Acts(ActList::new(vec![Act::Inform { domain: 0, slot: 0, value: 2 }]))
    );
    let state = ModuleOutput::State(DialogueState::empty(&w));
    let salad = v.encode(&["north", "<copy>", "try", "restaurant_3", "<eos>"]).unwrap();
    let p = decode_output(&w, &v, &salad, &state);
    assert!(p.fallback);
    assert_eq!(p.output, state);
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for _ in 0..500 {
        let y: Vec<u32> = (0..rng.random_range(0..8)).map(|_| rng.random_range(0..v.len() as u32)).collect();
        for o in [&orig, &state, &ModuleOutput::Response(vec!["<empty>".into()])] {
            let p = decode_output(&w, &v, &y, o);
            assert!(p.fallback || !p.fallback);
        }
    }
}

#[test]
fn checkpoint_save_load_save_is_byte_identical() {
    let v = vocab();
    let dir = tempfile::tempdir().unwrap();
    let mut p = PolicyModel::new(&v, &ModelConfig::default());
    jitter(&mut p.store, 16, 0.1);
    let a = dir.path().join("a.ckpt");
    let b = dir.path().join("b.ckpt");
    p.save(&a, &v).unwrap();
    let back = PolicyModel::load(&a, &v).unwrap();
    assert_eq!(back, p);
    back.save(&b, &v).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let other = build_vocabulary(&Schema::default(), 2).unwrap();
    assert!(PolicyModel::load(&a, &other).is_err());
    assert!(ValueModel::load(&a, &v).is_err());
}
