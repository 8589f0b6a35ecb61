//! Rank aggregation on a published set of mean final regrets.
//!
//! The printed average ranks were computed from per-seed regrets that are not
//! available here, so only the aggregation arithmetic and the winner are pinned.

use depfn::harness::ranks::{rank_table, RankScope};

/// Method, regrets on (Branin, Hartmann-4, Hartmann-6, Ackley, noisy Ackley), printed average rank.
const ROWS: &[(&str, [Option<f64>; 5], f64)] = &[
    ("dec-pfn-logei", [Some(0.0454), Some(0.0), Some(0.2931), Some(0.0570), Some(0.0774)], 3.80),
    ("dec-icl-logei", [Some(0.0493), Some(0.0), Some(0.4159), Some(0.1211), Some(0.1080)], 4.40),
    ("tuned-pfn-logei", [Some(0.0661), Some(0.0), Some(0.2331), Some(0.0607), Some(0.0373)], 4.40),
    ("gp-botorch", [Some(0.0384), Some(0.0), Some(0.1718), None, Some(0.1381)], 5.00),
    ("tuned-icl-logei", [Some(0.0217), Some(0.0), Some(0.3840), Some(0.1211), Some(0.1080)], 6.00),
    ("gp-ei-botorch", [Some(0.0244), Some(0.0), Some(0.3619), Some(0.1691), Some(0.3216)], 9.20),
    ("gp-ei", [Some(0.0222), Some(0.0), Some(0.1948), Some(0.3709), Some(0.5974)], 9.60),
    ("dec-pfn-ts", [Some(0.0655), Some(0.0), Some(0.4448), Some(0.2489), Some(0.2436)], 10.20),
    ("dec-icl-ei", [Some(0.0539), Some(0.0), Some(0.4490), Some(0.2640), Some(0.2389)], 10.60),
    ("dec-icl-lcb", [Some(0.0425), Some(0.0), Some(0.4336), Some(0.2636), Some(0.2377)], 11.00),
    ("tuned-pfn-ts", [Some(0.0368), Some(0.0), Some(0.4070), Some(0.2595), Some(0.2486)], 11.60),
    ("tuned-icl-ts", [Some(0.0935), Some(0.0), Some(0.3513), Some(0.2551), Some(0.2460)], 12.00),
    ("tuned-pfn-lcb", [Some(0.0459), Some(0.0), Some(0.4064), Some(0.2456), Some(0.2360)], 12.20),
    ("dec-icl-ts", [Some(0.0473), Some(0.0), Some(0.4023), Some(0.2929), Some(0.2490)], 12.60),
    ("dec-pfn-lcb", [Some(0.0548), Some(0.0), Some(0.4111), Some(0.2427), Some(0.2489)], 13.20),
    ("dec-icl-ts-total", [Some(0.0632), Some(0.0), Some(0.4101), Some(0.2705), Some(0.2490)], 13.60),
    ("dec-icl-lcb-total", [Some(0.0586), Some(0.0), Some(0.4346), Some(0.2533), Some(0.2371)], 13.80),
    ("tuned-icl-lcb", [Some(0.0569), Some(0.0), Some(0.4507), Some(0.2421), Some(0.2367)], 13.80),
    ("tpe", [Some(0.1103), Some(0.0), Some(0.4510), None, Some(0.8044)], 14.25),
    ("gp-ts-epi", [Some(0.0524), Some(0.0), Some(0.6015), None, None], 16.67),
    ("random", [Some(0.3535), Some(0.0342), Some(1.0019), Some(2.0359), Some(2.0359)], 19.20),
    ("gp-ts", [Some(0.0680), Some(0.0), Some(0.5966), Some(0.6457), Some(0.6380)], 19.40),
];

/// Counting oracle: rank = #smaller + (#equal + 1) / 2, averaged over present cells.
fn oracle_average_ranks() -> Vec<(String, f64)> {
    ROWS.iter()
        .map(|(name, row, _)| {
            let ranks: Vec<f64> = (0..5)
                .filter_map(|b| {
                    let v = row[b]?;
                    let col = ROWS.iter().filter_map(|r| r.1[b]);
                    let (less, eq) = col.fold((0, 0), |(l, e), w| (l + usize::from(w < v), e + usize::from(w == v)));
                    Some(less as f64 + (eq as f64 + 1.0) / 2.0)
                })
                .collect();
            (name.to_string(), ranks.iter().sum::<f64>() / ranks.len() as f64)
        })
        .collect()
}

fn recomputed() -> depfn::harness::ranks::RankTable {
    let methods = ROWS.iter().map(|r| r.0.to_string()).collect();
    let benchmarks = ["branin", "hartmann4", "hartmann6", "ackley", "ackley-noisy"].map(String::from).to_vec();
    let values = ROWS.iter().map(|r| r.1.to_vec()).collect();
    rank_table(methods, benchmarks, values, RankScope::Available).unwrap()
}

#[test]
fn aggregation_matches_counting_oracle() {
    let table = recomputed();
    for (name, want) in oracle_average_ranks() {
        let i = table.methods.iter().position(|m| *m == name).unwrap();
        assert!((table.average_rank[i] - want).abs() < 1e-12, "{name}: {} vs {want}", table.average_rank[i]);
    }
    assert!(table.average_rank.windows(2).all(|w| w[0] <= w[1]));
}

#[test]
fn recomputed_winner_matches_printed_winner() {
    let table = recomputed();
    let printed_best = ROWS.iter().min_by(|a, b| a.2.total_cmp(&b.2)).unwrap().0;
    assert_eq!(table.methods[0], printed_best);
}

/// Mean-based ranks cannot reproduce ranks built from per-seed regrets; this
/// stays red and documents the gap (largest deviation 3.8).
#[test]
#[ignore = "printed ranks come from per-seed regrets that are not published"]
fn recomputed_ranks_match_printed_column() {
    let table = recomputed();
    let mut worst = 0.0f64;
    for (name, _, printed) in ROWS {
        let i = table.methods.iter().position(|m| m == name).unwrap();
        worst = worst.max((table.average_rank[i] - printed).abs());
    }
    let mut printed_order: Vec<_> = ROWS.iter().collect();
    printed_order.sort_by(|a, b| a.2.total_cmp(&b.2));
    let top3: Vec<&str> = printed_order.iter().take(3).map(|r| r.0).collect();
    assert_eq!(table.methods[..3], top3[..]);
    assert!(worst <= 0.13, "largest deviation {worst}");
}
