//! Decoders and text parsers must reject bad input with an error, never a
//! panic. Inputs are arbitrary bytes and single-byte mutations of valid
//! encodings.

use std::sync::OnceLock;

use proptest::prelude::*;
use vqbet::data::{Trajectory, TrajectoryDataset};
use vqbet::eval::read_traces_csv;
use vqbet::numerics::SeededRng;
use vqbet::policy::{PolicyConfig, PolicyNet};
use vqbet::rvq::{ResidualQuantizer, RvqConfig};

struct Valid {
    dataset: Vec<u8>,
    tokenizer: Vec<u8>,
    policy: Vec<u8>,
    config: String,
}

fn valid() -> &'static Valid {
    static V: OnceLock<Valid> = OnceLock::new();
    V.get_or_init(|| {
        let mut rng = SeededRng::new(5);
        let trajs = (0..3)
            .map(|i| Trajectory {
                observations: (0..(4 + i) * 2).map(|_| rng.normal() as f32).collect(),
                actions: (0..(4 + i) * 2).map(|_| rng.normal() as f32).collect(),
            })
            .collect();
        let ds = TrajectoryDataset::new(2, 2, trajs).unwrap();
        let rvq = RvqConfig { latent_dim: 2, hidden: 4, depth: 1, codebook_sizes: vec![2, 3], ..RvqConfig::desk(2, 1) };
        let q = ResidualQuantizer::new(rvq, &mut rng).unwrap();
        let cfg = PolicyConfig { embed_dim: 4, head_hidden: 4, layers: 1, heads: 1, codebook_sizes: vec![2, 3], ..PolicyConfig::desk(2, 2) };
        let net = PolicyNet::new(cfg.clone(), &mut rng).unwrap();
        Valid { dataset: ds.to_bytes().unwrap(), tokenizer: q.to_bytes(), policy: net.to_bytes(), config: cfg.to_text() }
    })
}

fn mutate(bytes: &[u8], pos: usize, val: u8) -> Vec<u8> {
    let mut b = bytes.to_vec();
    if !b.is_empty() {
        let i = pos % b.len();
        b[i] = val;
    }
    b
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn dataset_decode_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..256), pos in any::<usize>(), val in any::<u8>()) {
        let _ = TrajectoryDataset::from_bytes(&bytes);
        let mutated = mutate(&valid().dataset, pos, val);
        if let Ok(ds) = TrajectoryDataset::from_bytes(&mutated) {
            prop_assert_eq!(ds.to_bytes().unwrap(), mutated);
        }
    }

    #[test]
    fn checkpoint_decoders_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..256), pos in any::<usize>(), val in any::<u8>(), cut in any::<usize>()) {
        let _ = ResidualQuantizer::from_bytes(&bytes);
        let _ = PolicyNet::from_bytes(&bytes);
        let _ = ResidualQuantizer::from_bytes(&mutate(&valid().tokenizer, pos, val));
        let _ = PolicyNet::from_bytes(&mutate(&valid().policy, pos, val));
        let t = &valid().tokenizer;
        let _ = ResidualQuantizer::from_bytes(&t[..cut % (t.len() + 1)]);
    }

    #[test]
    fn policy_config_text_never_panics(text in "\\PC*", pos in any::<usize>(), ch in "[a-z0-9=,.\\n-]") {
        let _ = PolicyConfig::from_text(&text);
        let mut edited = valid().config.clone();
        let at = (0..=edited.len()).filter(|&i| edited.is_char_boundary(i)).nth(pos % (edited.len() + 1)).unwrap_or(0);
        edited.insert_str(at, &ch);
        if let Ok(cfg) = PolicyConfig::from_text(&edited) {
            prop_assert_eq!(PolicyConfig::from_text(&cfg.to_text()).unwrap(), cfg);
        }
    }

    #[test]
    fn trace_csv_never_panics(text in "(episode,t,obs_0,obs_1,action_0,action_1(,code_0)?\\n)?([0-9eE.,\\-]{0,30}\\n){0,4}") {
        let _ = read_traces_csv(text.as_bytes());
    }
}
