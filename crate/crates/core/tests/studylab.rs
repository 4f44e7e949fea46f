mod oracles;

use gib_core::studylab::{aggregate_prepost, cronbach_alpha, score_assessment, AssessmentSheet, LikertMatrix, Phase, SurveyTable};
use gib_core::Error;
use oracles::*;
use proptest::prelude::*;

fn survey() -> SurveyTable {
    SurveyTable::from_csv(SURVEY_CSV.as_bytes()).unwrap()
}

fn matrix(rows: Vec<Vec<i32>>) -> LikertMatrix {
    LikertMatrix {
        construct: "pu".into(),
        arm: None,
        phase: None,
        items: (0..rows[0].len()).map(|i| format!("q{i}")).collect(),
        responses: rows,
    }
}

#[test]
fn six_row_prepost_matches_direct_arithmetic() {
    let t = survey();
    let items = t.items_with_prefix("pu");
    assert_eq!(items, ["pu1", "pu2", "pu3"]);
    let pp = aggregate_prepost(&t, "pu", &items, "assistant").unwrap();
    let (m, s) = mean_sd(&[10.0 / 3.0, 8.0 / 3.0, 13.0 / 3.0]);
    assert!((pp.pre.mean - m).abs() < 1e-12 && (pp.pre.sd - s).abs() < 1e-12);
    let (m, s) = mean_sd(&[13.0 / 3.0, 10.0 / 3.0, 5.0]);
    assert!((pp.post.mean - m).abs() < 1e-12 && (pp.post.sd - s).abs() < 1e-12);
    assert_eq!(pp.pre.n, 3);
}

#[test]
fn listwise_deletion_drops_incomplete_respondents() {
    let t = survey();
    let eou = t.items_with_prefix("eou");
    let m = t.likert_matrix("eou", &eou, Some("assistant"), Some(Phase::Pre)).unwrap();
    assert_eq!(m.responses, vec![vec![4, 4], vec![4, 5]]);
}

#[test]
fn missing_arm_cell_is_an_error() {
    let t = survey();
    let items = t.items_with_prefix("pu");
    assert!(matches!(aggregate_prepost(&t, "pu", &items, "search"), Err(Error::MissingCell(_))));
    assert_eq!(t.arms(), ["assistant", "dashboard"]);
}

#[test]
fn alpha_fixtures() {
    assert_eq!(cronbach_alpha(&matrix(vec![vec![2, 2, 2], vec![5, 5, 5], vec![3, 3, 3]])).unwrap(), 1.0);
    assert!(cronbach_alpha(&matrix(vec![vec![1, 1], vec![1, 3], vec![3, 1], vec![3, 3]])).unwrap().abs() < 1e-12);
    let hand = hand_alpha(&[vec![2.0, 3.0, 3.0], vec![4.0, 4.0, 5.0], vec![3.0, 3.0, 4.0], vec![5.0, 4.0, 5.0]]);
    let got = cronbach_alpha(&matrix(vec![vec![2, 3, 3], vec![4, 4, 5], vec![3, 3, 4], vec![5, 4, 5]])).unwrap();
    assert!((got - hand).abs() < 1e-12);
    assert!((got - 12.0 / 13.0).abs() < 1e-12);
}

#[test]
fn assessment_scores() {
    let sheet = |answers: &[&str], key: &[&str]| AssessmentSheet {
        respondent: "r".into(),
        answers: answers.iter().map(|s| s.to_string()).collect(),
        key: key.iter().map(|s| s.to_string()).collect(),
        arm: "assistant".into(),
        phase: Phase::Post,
    };
    let key = ["a", "b", "c", "d", "a", "b", "c", "d", "a", "b"];
    assert_eq!(score_assessment(&sheet(&key, &key)).unwrap(), 100.0);
    assert_eq!(score_assessment(&sheet(&["x"; 10], &key)).unwrap(), 0.0);
    let seven = ["a", "b", "c", "d", "a", "b", "c", "x", "x", "x"];
    assert_eq!(score_assessment(&sheet(&seven, &key)).unwrap(), 70.0);
    assert!(matches!(score_assessment(&sheet(&["a"], &key)), Err(Error::Schema(_))));
}

proptest! {
    #[test]
    fn alpha_shift_invariant_and_bounded(rows in prop::collection::vec(prop::collection::vec(1i32..=5, 3), 3..12), c in 1i32..4) {
        let m = matrix(rows.clone());
        if let Ok(a) = cronbach_alpha(&m) {
            prop_assert!(a <= 1.0 + 1e-12);
            let shifted = matrix(rows.iter().map(|r| r.iter().map(|v| v + c).collect()).collect());
            prop_assert_eq!(cronbach_alpha(&shifted).unwrap(), a);
        }
    }
}
