//! Golden trace of the first few engine iterations on a fixed small model.
//!
//! Regenerate with `UPDATE_GOLDEN=1 cargo test -p draftreuse-core --test golden`.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use draftreuse_core::numerics::seeded_matrix;
use draftreuse_core::{DraftModel, Engine, EngineConfig, ModelSpec, TargetModel, TokenInfoTable};

fn trace() -> String {
    let target = Arc::new(
        TargetModel::synthetic(&ModelSpec {
            vocab: 16,
            hidden: 8,
            seed: 3,
            ..ModelSpec::default()
        })
        .unwrap(),
    );
    let draft = DraftModel::perturbed(target.clone(), 0.5, 3).unwrap();
    let table = TokenInfoTable::from_dense(&seeded_matrix(16, 16, 11, 1.5).unwrap()).unwrap();
    let cfg = EngineConfig {
        steps: 3,
        branch: 2,
        budget: 6,
        resample_budget: 3,
        max_new_tokens: 24,
        ..EngineConfig::default()
    };
    let mut engine = Engine::new(cfg, &target, &draft, &table, &[4, 7, 1]).unwrap().with_event_log();
    let mut out = String::new();
    let mut seen = 0;
    while !engine.is_done() && engine.state().iteration < 6 {
        engine.step().unwrap();
        for ev in &engine.events()[seen..] {
            let _ = writeln!(out, "{ev}");
        }
        seen = engine.events().len();
        let st = engine.state();
        let _ = writeln!(out, "emitted {:?}", st.emitted);
        if let Some(tree) = &st.pending {
            for i in tree.preorder() {
                let n = tree.node(i);
                let _ = writeln!(out, "  pending {} {} {:.6} {:.6}", n.depth, n.token, n.prob, n.joint_prob);
            }
        }
    }
    out
}

#[test]
fn first_iterations_match_golden_trace() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/engine_trace.txt");
    let got = trace();
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        std::fs::write(&path, &got).unwrap();
    }
    let want = std::fs::read_to_string(&path).expect("golden file present");
    assert_eq!(got, want);
}
