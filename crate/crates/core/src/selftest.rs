//! Bundled fixture checks behind `adaptbpe self-test`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adaptation::{adapt, AdaptConfig};
use crate::baselines::{first_k, first_k_positive, top_k};
use crate::engine::{reference_tokenize, tokenize_corpus, Encoder};
use crate::error::Error;
use crate::fixtures;
use crate::merge_model::{build_merge_table, MergeKind};
use crate::metrics::evaluate;
use crate::pretokenize::{SymbolUnit, WordHistogram};

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, f: impl FnOnce() -> Result<String, String>) -> CheckOutcome {
    match f() {
        Ok(detail) => CheckOutcome {
            name,
            passed: true,
            detail,
        },
        Err(detail) => CheckOutcome {
            name,
            passed: false,
            detail,
        },
    }
}

fn expect<T: PartialEq + std::fmt::Debug>(what: &str, got: T, want: T) -> Result<(), String> {
    if got == want {
        Ok(())
    } else {
        Err(format!("{what}: got {got:?}, expected {want:?}"))
    }
}

fn err(e: Error) -> String {
    e.to_string()
}

pub fn run(seed: u64) -> Vec<CheckOutcome> {
    let table = fixtures::toy_table();
    let hist = fixtures::toy_histogram();
    vec![
        check("fixture adaptation trace", || {
            let r = adapt(&table, &hist, AdaptConfig::new(2)).map_err(err)?;
            let swaps: Vec<_> = r
                .swap_trace
                .iter()
                .map(|s| {
                    (
                        s.demoted_rank,
                        s.demoted_freq,
                        s.promoted_rank,
                        s.promoted_freq,
                    )
                })
                .collect();
            expect("swaps", swaps, vec![(1, 2, 2, 5)])?;
            let actual: Vec<u32> = r
                .table
                .rules()
                .iter()
                .filter(|x| x.kind == MergeKind::Actual)
                .map(|x| x.origin_rank)
                .collect();
            expect("actual ranks", actual, vec![0, 2])?;
            expect("incremental total", r.incremental_token_total, 15)?;
            expect("canonical total", r.canonical_token_total, 17)?;
            expect("merge depth", r.merge_depth, Some(2))?;
            Ok("1 swap, totals 15/17, depth 2".into())
        }),
        check("fixture compression utility", || {
            let fk = evaluate(&first_k(&table, 2).map_err(err)?, &hist).map_err(err)?;
            let ad = evaluate(
                &adapt(&table, &hist, AdaptConfig::new(2))
                    .map_err(err)?
                    .table,
                &hist,
            )
            .map_err(err)?;
            expect("first_k total", fk.token_total, 20)?;
            expect("first_k cu", fk.cu, 1.0 / 3.0)?;
            expect("adaptbpe cu", ad.cu, 13.0 / 30.0)?;
            Ok(format!("cu {:.4} vs {:.4}", fk.cu, ad.cu))
        }),
        check("fixture top_k", || {
            let t = top_k(&table, &hist, 2).map_err(err)?;
            expect(
                "top_k total",
                tokenize_corpus(&t, &hist).map_err(err)?.token_total(),
                16,
            )?;
            Ok("total 16".into())
        }),
        check("fixture first_k_pos", || {
            let t = build_merge_table(
                &["a", "b", "c", "d"],
                &[("a", "b"), ("c", "d"), ("ab", "ab")],
            )
            .map_err(err)?;
            let h = WordHistogram::from_counts(SymbolUnit::Bytes, [("abab", 2)]);
            let pos = evaluate(&first_k_positive(&t, &h, 2).map_err(err)?, &h).map_err(err)?;
            let plain = evaluate(&first_k(&t, 2).map_err(err)?, &h).map_err(err)?;
            expect("first_k_pos cu", pos.cu, 0.75)?;
            expect("first_k cu", plain.cu, 0.5)?;
            Ok("cu 0.75 vs 0.5".into())
        }),
        check("empty corpus guard", || {
            match adapt(&table, &WordHistogram::default(), AdaptConfig::new(2)) {
                Err(Error::EmptyCorpus) => Ok("EmptyCorpus".into()),
                other => Err(format!("expected EmptyCorpus, got {other:?}")),
            }
        }),
        check("oracle equivalence smoke", || {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let alphabet = fixtures::letters(4);
            let t = fixtures::random_table(&mut rng, &alphabet, 20);
            let enc = Encoder::new(&t);
            for _ in 0..100 {
                let w = fixtures::random_word(&mut rng, &alphabet, 30, false);
                let fast = enc.encode_word(&w).map_err(err)?;
                let slow = reference_tokenize(&t, &w).map_err(err)?;
                if fast != slow {
                    return Err(format!("mismatch on {:?}", String::from_utf8_lossy(&w)));
                }
            }
            Ok("100 words".into())
        }),
    ]
}
