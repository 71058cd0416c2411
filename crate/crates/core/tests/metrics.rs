mod common;

use common::fixtures::{fixture, hits, FIXTURE_EXPECTED};
use latent_terms::eval::{
    evaluate, format_run, mrr_at_k, ndcg_at_k, parse_qrels, parse_run, recall_at_k, tune_grid,
    Metric, MissingQueries, QrelSet, Run, TuneGrid, TuneOptions,
};
use latent_terms::index::build_index;
use latent_terms::latent::{transform_corpus, PhiTransform, SparseVector};
use latent_terms::scorer::{search_batch, Bm25Params, Hit, Scoring};
use latent_terms::{Error, Execution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

#[test]
fn three_query_fixture() {
    let (run, qrels) = fixture();
    let got = [
        ndcg_at_k(&run, &qrels, 10).unwrap(),
        mrr_at_k(&run, &qrels, 10).unwrap(),
        recall_at_k(&run, &qrels, 10).unwrap(),
        recall_at_k(&run, &qrels, 20).unwrap(),
        recall_at_k(&run, &qrels, 100).unwrap(),
    ];
    for ((name, want), got) in FIXTURE_EXPECTED.iter().zip(got) {
        assert!((got - want).abs() < 1e-9, "{name}: {got} vs {want}");
    }
}

#[test]
fn truncated_runs_score_the_same() {
    let (run, qrels) = fixture();
    for metric in [Metric::Ndcg, Metric::Recall, Metric::Mrr] {
        for k in [1, 3, 10, 20] {
            let full = evaluate(&run, &qrels, metric, k, MissingQueries::Exclude)
                .unwrap()
                .mean;
            let cut = evaluate(
                &run.truncated(k),
                &qrels,
                metric,
                k,
                MissingQueries::Exclude,
            )
            .unwrap()
            .mean;
            assert_eq!(full, cut);
        }
    }
}

#[test]
fn monotone_score_transforms_do_not_change_metrics() {
    let (run, qrels) = fixture();
    let mut squashed = Run::new("t");
    for q in run.query_ids() {
        let h = run
            .hits(q)
            .unwrap()
            .iter()
            .map(|h| Hit {
                doc_id: h.doc_id.clone(),
                score: (h.score / 7.0).exp(),
            })
            .collect();
        squashed.insert(q, h);
    }
    assert_eq!(
        ndcg_at_k(&run, &qrels, 10).unwrap(),
        ndcg_at_k(&squashed, &qrels, 10).unwrap()
    );
}

#[test]
fn missing_queries_can_score_zero() {
    let (mut run, mut qrels) = fixture();
    qrels.insert("q4", "d1", 1);
    run.insert("q5", hits(&["d1".to_string()]));
    let excluded = evaluate(&run, &qrels, Metric::Recall, 100, MissingQueries::Exclude).unwrap();
    let zeroed = evaluate(&run, &qrels, Metric::Recall, 100, MissingQueries::Zero).unwrap();
    assert!((excluded.mean - 1.0).abs() < 1e-12);
    assert!(zeroed.mean < excluded.mean);
}

#[test]
fn qrels_parsing() {
    let q = parse_qrels("q1\td1\t1\nq1\td2\t0\nq2\td1\t2\n").unwrap();
    assert_eq!(q.len(), 3);
    match parse_qrels("q1\td1\t1\nq1\td1\t2\n") {
        Err(Error::ParseError { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected ParseError, got {other:?}"),
    }
}

#[test]
fn run_file_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut run = Run::new("latent-terms");
    for q in 0..5 {
        let mut h: Vec<Hit> = (0..20)
            .map(|d| Hit {
                doc_id: format!("doc{}", q * 100 + d),
                score: rng.random_range(-5.0..50.0),
            })
            .collect();
        h.sort_by(|a, b| b.score.total_cmp(&a.score));
        run.insert(format!("q{q}"), h);
    }
    let text = format_run(&run);
    assert_eq!(text.lines().count(), 100);
    let again = format_run(&parse_run(&text).unwrap());
    assert_eq!(
        Sha256::digest(text.as_bytes()),
        Sha256::digest(again.as_bytes())
    );
}

/// Pooled (pre-φ) vectors with planted relevance: document i carries topic
/// features i % 20 and (i + 7) % 20 plus noise features; query t carries
/// topic t.
fn planted_pooled() -> (Vec<SparseVector>, Vec<SparseVector>, QrelSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut qrels = QrelSet::default();
    let docs = (0..100)
        .map(|i| {
            let id = format!("d{i:03}");
            let (a, b) = (i % 20, (i + 7) % 20);
            qrels.insert(&format!("q{a}"), &id, 1);
            qrels.insert(&format!("q{b}"), &id, 1);
            let mut e = vec![
                (a as u32, rng.random_range(1.0f32..9.0)),
                (b as u32, rng.random_range(1.0f32..9.0)),
            ];
            for _ in 0..6 {
                e.push((rng.random_range(20..60), rng.random_range(0.1f32..16.0)));
            }
            e.sort_by_key(|x| x.0);
            e.dedup_by_key(|x| x.0);
            SparseVector::new(id, e).unwrap()
        })
        .collect();
    let queries = (0..20)
        .map(|t| {
            let mut e = vec![(t as u32, 4.0f32)];
            e.push((rng.random_range(20..60), rng.random_range(0.1f32..4.0)));
            SparseVector::new(format!("q{t}"), e).unwrap()
        })
        .collect();
    (docs, queries, qrels)
}

fn options() -> TuneOptions {
    TuneOptions {
        metric: Metric::Ndcg,
        k: 10,
        top_n: 100,
        missing: MissingQueries::Exclude,
        exec: Execution::default(),
    }
}

#[test]
fn default_grid_returns_defaults() {
    let (docs, queries, qrels) = planted_pooled();
    let result = tune_grid(&docs, 60, &queries, &qrels, &TuneGrid::default(), options()).unwrap();
    assert_eq!(result.table.len(), 1);
    assert_eq!(
        (
            result.best.k1,
            result.best.b,
            result.best.alpha_doc,
            result.best.alpha_query
        ),
        (8.0, 0.7, 0.5, 0.5)
    );
    assert!(!result.caveat.is_empty());
}

#[test]
fn best_cell_dominates_and_reproduces() {
    let (docs, queries, qrels) = planted_pooled();
    let grid = TuneGrid {
        k1: vec![2.0, 8.0],
        b: vec![0.0, 0.7],
        alpha_doc: vec![0.5, 1.0],
        alpha_query: vec![0.5, 1.0],
        alpha: Vec::new(),
    };
    let result = tune_grid(&docs, 60, &queries, &qrels, &grid, options()).unwrap();
    assert_eq!(result.table.len(), 16);
    assert!(result.table.iter().all(|r| r.value <= result.best_value));

    // from scratch with the winning cell
    let best = result.best;
    let index = build_index(
        &transform_corpus(&docs, PhiTransform::power(best.alpha_doc).unwrap()),
        60,
    )
    .unwrap();
    let qs = transform_corpus(&queries, PhiTransform::power(best.alpha_query).unwrap());
    let scoring = Scoring::Bm25(Bm25Params::new(best.k1, best.b).unwrap());
    let run = Run::from_lists(
        &search_batch(&index, &qs, &scoring, 100, Execution::Sequential).unwrap(),
        "t",
    );
    assert!((ndcg_at_k(&run, &qrels, 10).unwrap() - result.best_value).abs() < 1e-9);
}

#[test]
fn grid_without_judged_queries_fails() {
    let (docs, queries, _) = planted_pooled();
    let err = tune_grid(
        &docs,
        60,
        &queries,
        &QrelSet::default(),
        &TuneGrid::default(),
        options(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::NoJudgedQueries));
}
