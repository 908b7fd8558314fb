mod common;

use std::sync::Arc;

use leveler_core::corpus::{self, Split};
use leveler_core::harness::{
    bank_query, export_scatter, run_benchmark, scatter_svg, BankFilter, BenchCorpus, BenchEnv, ResponseBank,
    RunSpec, RunStore, ScatterKind,
};
use leveler_core::metrics::REPORT_COLUMNS;
use leveler_core::prompting::{PromptMethod, PromptTemplates};
use leveler_core::providers::{MockProvider, MockScript, Provider, ProviderConfig};
use leveler_core::readability::Scorer;

use common::synthetic_articles;

fn corpus(scorer: &Scorer) -> BenchCorpus {
    let articles = synthetic_articles(60, 3, 4, |t| scorer.score(t).unwrap().score);
    let manifest = corpus::split_by_set(&articles, 1).unwrap();
    BenchCorpus {
        train: corpus::pairs_for_split(&articles, &manifest, Split::Train),
        valid: corpus::pairs_for_split(&articles, &manifest, Split::Valid),
        test: corpus::pairs_for_split(&articles, &manifest, Split::Test),
    }
}

#[test]
fn persisted_run_is_idempotent_and_exportable() {
    let dir = tempfile::tempdir().unwrap();
    let scorer = Scorer::bundled();
    let templates = PromptTemplates::bundled();
    let corpus = corpus(&scorer);
    let spec = RunSpec {
        run_id: "disk".into(),
        split: Split::Test,
        sample_size: 6,
        providers: vec![
            ProviderConfig::mock("oracle", MockScript::oracle()),
            ProviderConfig::mock("echo", MockScript::echo_source()),
        ],
        methods: vec![PromptMethod::ZeroShot, PromptMethod::FewShot(3)],
        over_generation_k: 2,
        seed: 3,
        window: 400.0,
    };
    let providers: Vec<Arc<dyn Provider>> = spec
        .providers
        .iter()
        .map(|c| Arc::new(MockProvider::new(c.clone()).unwrap()) as Arc<dyn Provider>)
        .collect();
    let store = RunStore::new(dir.path().join("runs"));

    let first = {
        let bank = ResponseBank::open(dir.path().join("bank")).unwrap();
        let env = BenchEnv {
            scorer: &scorer,
            templates: &templates,
            embedder: None,
            bank: &bank,
        };
        let rec = run_benchmark(&spec, &corpus, &providers, &env).unwrap();
        store.save(&rec).unwrap();
        assert_eq!(bank.len(), rec.new_candidates);
        rec
    };
    assert_eq!(first.series.len(), 4);
    for s in &first.series {
        assert_eq!(s.report.support + s.report.failures, spec.sample_size);
    }

    let bank = ResponseBank::open(dir.path().join("bank")).unwrap();
    let before = bank.len();
    let env = BenchEnv {
        scorer: &scorer,
        templates: &templates,
        embedder: None,
        bank: &bank,
    };
    let second = run_benchmark(&spec, &corpus, &providers, &env).unwrap();
    assert_eq!(second.new_candidates, 0);
    assert_eq!(bank.len(), before);

    let loaded = store.load("disk").unwrap();
    assert_eq!(loaded, first);
    assert_eq!(store.list().unwrap(), ["disk"]);

    let run_dir = store.run_dir("disk");
    let report = std::fs::read_to_string(run_dir.join("report.csv")).unwrap();
    assert_eq!(report.lines().next().unwrap(), REPORT_COLUMNS.join(","));
    assert_eq!(report.lines().count(), 5);
    let scatter = std::fs::read_to_string(run_dir.join("scatter.csv")).unwrap();
    let support: usize = first.series.iter().map(|s| s.report.support).sum();
    assert_eq!(scatter.lines().count(), support + 1);

    let series = export_scatter(&loaded);
    let svg = scatter_svg(&series[0], ScatterKind::Score);
    assert!(svg.starts_with("<svg") && svg.contains("class=\"band\""));
    assert_eq!(svg.matches("<circle").count(), series[0].points.len());
    assert!(scatter_svg(&series[1], ScatterKind::Shift).contains("class=\"axis\""));

    let pair = &first.sample[0];
    let hits = bank_query(&bank, &BankFilter::for_pair(pair));
    assert!(hits.iter().all(|c| &c.pair_id == pair));
    let d: Vec<f64> = hits.iter().map(|c| c.distance_to_target()).collect();
    assert!(d.windows(2).all(|w| w[0] <= w[1]));
}
