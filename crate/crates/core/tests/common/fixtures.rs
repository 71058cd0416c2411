use latent_terms::eval::{parse_qrels, QrelSet, Run};
use latent_terms::scorer::Hit;

pub fn hits(ids: &[String]) -> Vec<Hit> {
    ids.iter()
        .enumerate()
        .map(|(i, id)| Hit {
            doc_id: id.clone(),
            score: 100.0 - i as f64,
        })
        .collect()
}

/// q1 judges d1:1, d3:2, d5:1; q2 judges d2:1; q3 judges d4:1, d6:1.
/// q1 retrieves d3 d2 d1 d7 d5; q2 retrieves d9 d8 d7 d2; q3 retrieves 14
/// unjudged documents, d4 at rank 15, 24 more, then d6 at rank 40.
pub fn fixture() -> (Run, QrelSet) {
    let qrels = parse_qrels(
        "query-id\tcorpus-id\tscore\nq1\td1\t1\nq1\td3\t2\nq1\td5\t1\nq2\td2\t1\nq3\td4\t1\nq3\td6\t1\n",
    )
    .unwrap();
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let mut q3: Vec<String> = (10..24).map(|i| format!("x{i}")).collect();
    q3.push("d4".into());
    q3.extend((24..48).map(|i| format!("x{i}")));
    q3.push("d6".into());
    let mut run = Run::new("t");
    run.insert("q1", hits(&s(&["d3", "d2", "d1", "d7", "d5"])));
    run.insert("q2", hits(&s(&["d9", "d8", "d7", "d2"])));
    run.insert("q3", hits(&q3));
    (run, qrels)
}

/// Hand-computed means over q1, q2, q3 (gain 2^rel − 1 for nDCG).
///
/// nDCG@10: q1 DCG  = 3/log2(2) + 1/log2(4) + 1/log2(6) = 3.886852807234541
///             IDCG = 3/log2(2) + 1/log2(3) + 1/log2(4) = 4.130929753571457
///             ratio 0.940914767159646
///          q2 1/log2(5) = 0.43067655807339306
///          q3 nothing relevant in the top 10 = 0
/// MRR@10: 1, 1/4, 0.
/// Recall: @10 → 1, 1, 0; @20 → 1, 1, 1/2; @100 → 1, 1, 1.
pub const FIXTURE_EXPECTED: [(&str, f64); 5] = [
    ("nDCG@10", 0.45719710841101296),
    ("MRR@10", 0.4166666666666667),
    ("Recall@10", 2.0 / 3.0),
    ("Recall@20", 5.0 / 6.0),
    ("Recall@100", 1.0),
];
