use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dskd::composer::{compose_rows, compose_word, keep_rate, Composition, CompositionConfig};
use dskd::corpus::VocabSpec;
use dskd::embed_store::EmbeddingStore;
use dskd::lexicon::{Label, RelationSet};
use dskd::sensedict::{self, SenseDict};
use dskd::toylm::Matrix;

use crate::{ensure, Check};

const TOKENS: u32 = 50;
const PER_GROUP: usize = 20;
const SIGMA: f64 = 1.0;
const D: usize = 2;

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller from two uniforms.
    let u1: f64 = rng.random_range(f64::EPSILON..1.0);
    let u2: f64 = rng.random();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

fn sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean(points: &[&Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; D];
    for p in points {
        for (a, b) in m.iter_mut().zip(p.iter()) {
            *a += b / points.len() as f64;
        }
    }
    m
}

fn wcss(groups: [&[&Vec<f64>]; 2]) -> f64 {
    groups
        .iter()
        .filter(|g| !g.is_empty())
        .map(|g| {
            let c = mean(g);
            g.iter().map(|p| sq(p, &c)).sum::<f64>()
        })
        .sum()
}

/// Exact 2-means objective. Optimal clusters are split by the perpendicular
/// bisector of their centroids, so the optimum is among the bipartitions cut
/// by a line; every such line can be rotated to pass through two points, and
/// both sides' assignments of those two points are tried.
fn exact_two_means(points: &[Vec<f64>]) -> f64 {
    let n = points.len();
    let mut best = f64::INFINITY;
    for i in 0..n {
        for j in i + 1..n {
            let (p, q) = (&points[i], &points[j]);
            let side = |r: &Vec<f64>| (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
            for mask in 0..4u8 {
                let mut a: Vec<&Vec<f64>> = Vec::new();
                let mut b: Vec<&Vec<f64>> = Vec::new();
                for (idx, r) in points.iter().enumerate() {
                    let left = if idx == i {
                        mask & 1 == 1
                    } else if idx == j {
                        mask & 2 == 2
                    } else {
                        side(r) > 0.0
                    };
                    if left {
                        a.push(r)
                    } else {
                        b.push(r)
                    }
                }
                best = best.min(wcss([&a, &b]));
            }
        }
    }
    best
}

pub fn kmeans_recovery() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut store = EmbeddingStore::new(D, 2000);
    let mut planted = BTreeMap::new();
    let mut reservoir_rng = ChaCha8Rng::seed_from_u64(0);
    for t in 0..TOKENS {
        let mu0: Vec<f64> = (0..D).map(|_| rng.random_range(-20.0..20.0)).collect();
        let angle: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let mu1 = vec![mu0[0] + 10.0 * SIGMA * angle.cos(), mu0[1] + 10.0 * SIGMA * angle.sin()];
        let mut all = Vec::new();
        for mu in [&mu0, &mu1] {
            let mut pts: Vec<Vec<f64>> = (0..PER_GROUP)
                .map(|_| mu.iter().map(|m| m + SIGMA * gaussian(&mut rng)).collect())
                .collect();
            // Re-centre so the sample mean is the planted mean.
            let refs: Vec<&Vec<f64>> = pts.iter().collect();
            let shift: Vec<f64> = mean(&refs).iter().zip(mu.iter()).map(|(a, b)| b - a).collect();
            for p in &mut pts {
                for (v, s) in p.iter_mut().zip(&shift) {
                    *v += s;
                }
            }
            all.extend(pts);
        }
        for p in &all {
            let v: Vec<f32> = p.iter().map(|&x| x as f32).collect();
            store.offer(t, &v, &mut reservoir_rng).map_err(|e| e.to_string())?;
        }
        planted.insert(t, (mu0, mu1));
    }
    let dict = sensedict::build(&store, 2, 5).map_err(|e| e.to_string())?;

    let tol = 0.05 * SIGMA * (D as f64).sqrt();
    let mut worst_dist: f64 = 0.0;
    let mut worst_ratio: f64 = 0.0;
    for t in 0..TOKENS {
        let c = dict.lookup(t).ok_or(format!("token {t} missing from dict"))?;
        ensure!(c.rows() == 2, "token {t} has {} centroids", c.rows());
        let rows: Vec<Vec<f64>> = (0..2).map(|r| c.row(r).iter().map(|&x| x as f64).collect()).collect();
        let (mu0, mu1) = &planted[&t];
        let straight = sq(&rows[0], mu0).sqrt().max(sq(&rows[1], mu1).sqrt());
        let crossed = sq(&rows[0], mu1).sqrt().max(sq(&rows[1], mu0).sqrt());
        let dist = straight.min(crossed);
        ensure!(dist <= tol, "token {t}: centroid error {dist:.4} > {tol:.4}");
        worst_dist = worst_dist.max(dist);

        let points: Vec<Vec<f64>> = store
            .get(t)
            .unwrap_or_default()
            .iter()
            .map(|v| v.iter().map(|&x| x as f64).collect())
            .collect();
        let objective: f64 = points
            .iter()
            .map(|p| sq(p, &rows[0]).min(sq(p, &rows[1])))
            .sum();
        let exact = exact_two_means(&points);
        let ratio = objective / exact;
        ensure!(
            ratio <= 1.01,
            "token {t}: objective {objective:.4} vs exhaustive optimum {exact:.4}"
        );
        worst_ratio = worst_ratio.max(ratio);
    }
    Ok(format!(
        "{TOKENS} tokens: worst centroid error {worst_dist:.2e} (limit {tol:.3}), worst objective ratio {worst_ratio:.6}"
    ))
}

/// Step-by-step composition written directly from the procedure: start at a
/// sense of the first token, repeatedly match the running mean to the
/// nearest sense of the next token, and average the aligned rows.
fn reference_compose(tokens: &[Vec<Vec<f64>>]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for start in &tokens[0] {
        let mut aligned = vec![start.clone()];
        for next in &tokens[1..] {
            let running = mean(&aligned.iter().collect::<Vec<_>>());
            let mut pick = 0;
            for (i, cand) in next.iter().enumerate() {
                if sq(&running, cand) < sq(&running, &next[pick]) {
                    pick = i;
                }
            }
            aligned.push(next[pick].clone());
        }
        out.push(mean(&aligned.iter().collect::<Vec<_>>()));
    }
    out
}

fn rows_close(a: &[Vec<f64>], b: &[Vec<f64>], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.iter().zip(y).all(|(p, q)| (p - q).abs() <= tol))
}

fn mat(rows: &[Vec<f64>]) -> Matrix<f32> {
    Matrix::from_vec(rows.len(), D, rows.iter().flatten().map(|&x| x as f32).collect())
}

fn tiny_spec(words: Vec<(&str, Vec<u32>)>, vocab: usize, m_max: usize) -> Result<VocabSpec, String> {
    VocabSpec::new(
        vocab,
        (0..vocab).map(|i| format!("t{i}")).collect(),
        words.into_iter().map(|(w, t)| (w.to_string(), t)).collect(),
        BTreeMap::new(),
        m_max,
        0,
    )
    .map_err(|e| e.to_string())
}

pub fn composition_contracts() -> Check {
    let s1 = vec![vec![0.0, 0.0], vec![4.0, 4.0]];
    let s2 = vec![vec![1.0, 0.0], vec![3.0, 5.0]];
    let s3 = vec![vec![0.0, 2.0], vec![5.0, 3.0]];
    // Hand trace.
    //   sense 0: [0,0] -> mean [0,0] picks [1,0] (1 < 34); mean [.5,0] picks
    //            [0,2] (4.25 < 29.25); average [1/3, 2/3].
    //   sense 1: [4,4] picks [3,5] (2 < 25); mean [3.5,4.5] picks [5,3]
    //            (4.5 < 18.5); average [4, 4].
    let hand = vec![vec![1.0 / 3.0, 2.0 / 3.0], vec![4.0, 4.0]];
    let got = compose_rows(&[s1.clone(), s2.clone(), s3.clone()]);
    ensure!(rows_close(&got, &hand, 1e-12), "3-token trace {got:?}, hand {hand:?}");
    ensure!(
        rows_close(&reference_compose(&[s1.clone(), s2.clone(), s3.clone()]), &hand, 1e-12),
        "reference procedure disagrees with the hand trace"
    );

    let spec = tiny_spec(
        vec![("a", vec![0]), ("b", vec![1]), ("c", vec![2]), ("abc", vec![0, 1, 2]), ("aa", vec![3, 4])],
        5,
        3,
    )?;
    let mut dict = SenseDict::empty(D, 2);
    for (t, s) in [(0, &s1), (1, &s2), (2, &s3)] {
        dict.insert_token(t, mat(s)).map_err(|e| e.to_string())?;
    }
    let v = vec![0.625, -1.5];
    dict.insert_token(3, mat(&[v.clone(), v.clone()])).map_err(|e| e.to_string())?;
    dict.insert_token(4, mat(std::slice::from_ref(&v))).map_err(|e| e.to_string())?;
    let cfg = CompositionConfig { m_max: 3, k: 2 };

    let Composition::Composed(single) = compose_word("a", &dict, &spec, &cfg) else {
        return Err("single-token word not composed".into());
    };
    ensure!(Some(&single) == dict.lookup(0), "m=1 composition is not the token's own matrix");
    let Composition::Composed(three) = compose_word("abc", &dict, &spec, &cfg) else {
        return Err("3-token word not composed".into());
    };
    ensure!(three == mat(&got), "compose_word differs from compose_rows cast to f32");
    let Composition::Composed(fixed) = compose_word("aa", &dict, &spec, &cfg) else {
        return Err("fixed-point word not composed".into());
    };
    ensure!(
        (0..fixed.rows()).all(|r| fixed.row(r).iter().zip(&v).all(|(&x, &y)| (x as f64 - y).abs() <= 1e-12)),
        "constant senses moved: {fixed:?}"
    );

    // Equal contribution: single senses are forced to align.
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut random_cases = 0;
    for _ in 0..50 {
        let a: Vec<f64> = (0..D).map(|_| rng.random_range(-3.0..3.0)).collect();
        let b: Vec<f64> = (0..D).map(|_| rng.random_range(-3.0..3.0)).collect();
        let c = compose_rows(&[vec![a.clone()], vec![b.clone()]]);
        let want: Vec<f64> = a.iter().zip(&b).map(|(x, y)| (x + y) / 2.0).collect();
        ensure!(rows_close(&c, &[want], 1e-12), "k=1, m=2 is not the plain average");
        let m = rng.random_range(2..=4);
        let toks: Vec<Vec<Vec<f64>>> = (0..m)
            .map(|_| {
                (0..rng.random_range(1..=3))
                    .map(|_| (0..D).map(|_| rng.random_range(-3.0..3.0)).collect())
                    .collect()
            })
            .collect();
        let c = compose_rows(&toks);
        ensure!(c.len() == toks[0].len(), "row count differs from the first token's sense count");
        ensure!(rows_close(&c, &reference_compose(&toks), 1e-12), "random case disagrees with reference");
        random_cases += 1;
    }

    // Crafted keep rate: 10 synonym pairs, 4 of them with a 4-token word.
    let mut words: Vec<(String, Vec<u32>)> = (0..16).map(|i| (format!("w{i}"), vec![i])).collect();
    words.extend((0..4).map(|i| (format!("long{i}"), vec![16, 17, 18, 19 + i])));
    let spec = VocabSpec::new(
        23,
        (0..23).map(|i| format!("t{i}")).collect(),
        words,
        BTreeMap::new(),
        4,
        0,
    )
    .map_err(|e| e.to_string())?;
    let pairs = (0..6)
        .map(|i| (format!("w{}", 2 * i), format!("w{}", 2 * i + 1)))
        .chain((0..4).map(|i| (format!("long{i}"), format!("w{}", 12 + i))))
        .map(|(a, b)| (a, b, Label::Synonym));
    let rels = RelationSet::from_pairs(pairs, BTreeMap::new()).map_err(|e| e.to_string())?;
    let rate = keep_rate(&rels, &spec, 3).map_err(|e| e.to_string())?;
    ensure!(
        format!("{:.2}", rate.synonym.rate()) == "60.00",
        "crafted synonym keep rate {}",
        rate.synonym.rate()
    );

    let sets = keep_rate_oracle_cases()?;
    Ok(format!(
        "hand trace, m=1 identity, fixed point and {random_cases} random reference cases agree; crafted rate 60.00; {sets} random relation sets match the direct count and are monotone"
    ))
}

fn keep_rate_oracle_cases() -> Result<usize, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let cases = 100;
    for case in 0..cases {
        let nwords = rng.random_range(3..15);
        let mut next_tok = 0u32;
        let mut lengths = BTreeMap::new();
        let mut words = Vec::new();
        for w in 0..nwords {
            let len = rng.random_range(1..=5usize);
            let toks: Vec<u32> = (next_tok..next_tok + len as u32).collect();
            next_tok += len as u32;
            lengths.insert(format!("w{w}"), len);
            words.push((format!("w{w}"), toks));
        }
        let vocab = next_tok as usize;
        let spec = VocabSpec::new(vocab, (0..vocab).map(|i| format!("t{i}")).collect(), words, BTreeMap::new(), 5, 0)
            .map_err(|e| e.to_string())?;
        // Words w{nwords}.. are outside the vocabulary.
        let mut pairs = BTreeMap::new();
        for _ in 0..rng.random_range(0..25) {
            let a = rng.random_range(0..nwords + 2);
            let b = rng.random_range(0..nwords + 2);
            if a == b {
                continue;
            }
            let key = (a.min(b), a.max(b));
            let label = if rng.random_bool(0.5) { Label::Synonym } else { Label::Antonym };
            pairs.entry(key).or_insert(label);
        }
        let rels = RelationSet::from_pairs(
            pairs.iter().map(|(&(a, b), &l)| (format!("w{a}"), format!("w{b}"), l)),
            BTreeMap::new(),
        )
        .map_err(|e| e.to_string())?;
        let mut previous: Option<(f64, f64)> = None;
        for m in 1..=6 {
            let got = keep_rate(&rels, &spec, m).map_err(|e| e.to_string())?;
            let mut counts = [[0usize; 2]; 2];
            let mut outside = 0;
            for (&(a, b), &l) in &pairs {
                match (lengths.get(&format!("w{a}")), lengths.get(&format!("w{b}"))) {
                    (Some(&la), Some(&lb)) => {
                        let slot = &mut counts[l as usize];
                        slot[1] += 1;
                        if la.max(lb) <= m {
                            slot[0] += 1;
                        }
                    }
                    _ => outside += 1,
                }
            }
            let syn = got.get(Label::Synonym);
            let ant = got.get(Label::Antonym);
            ensure!(
                [syn.kept, syn.total] == counts[0] && [ant.kept, ant.total] == counts[1] && got.untokenizable == outside,
                "case {case}, m={m}: {got:?} vs counts {counts:?}, {outside} outside"
            );
            let rates = (syn.rate(), ant.rate());
            if let Some(p) = previous {
                ensure!(rates.0 >= p.0 && rates.1 >= p.1, "case {case}: rate fell from {p:?} to {rates:?} at m={m}");
            }
            previous = Some(rates);
        }
    }
    Ok(cases)
}
