use std::path::Path;

use collabdqn::report::{self, REFERENCE};
use collabdqn_core::eval::{EpisodeError, EvalReport, LandmarkSummary, Protocol, Stats};
use proptest::prelude::*;

fn protocol() -> Protocol {
    Protocol {
        starts_per_volume: 19,
        max_frames: 500,
        ladder: vec![3, 2, 1],
        roi_extent: 15,
    }
}

fn summary(name: &str, mean: f64, std: f64) -> LandmarkSummary {
    LandmarkSummary {
        name: name.into(),
        stats: Stats { mean, std, median: mean },
        per_volume: vec![("v0".into(), mean)],
    }
}

#[test]
fn rows_read_mean_plus_minus_std() {
    let r = EvalReport {
        protocol: protocol(),
        landmarks: vec![summary("AC", 0.93, 0.18), summary("PC", 1.05, 0.25)],
        episodes: Vec::new(),
    };
    let text = report::render_text(&r);
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines.contains(&"AC  0.93 ± 0.18"), "{text}");
    assert!(lines.contains(&"PC  1.05 ± 0.25"), "{text}");
    assert!(text.contains("population (divides by n)"));
    // The published block is present and labelled as reference only.
    assert!(text.contains("for reference only"));
    assert!(text.contains("brain MRI, Collab DQN"));
    let summary = report::render_summary(&r);
    assert_eq!(summary.lines().filter(|l| l.contains(" ± ")).count(), 3);
}

#[test]
fn empty_landmark_list_renders_only_the_header() {
    let r = EvalReport::from_episodes(protocol(), &[], Vec::new()).unwrap();
    let text = report::render_text(&r);
    assert_eq!(text, report::render_summary(&r));
    assert_eq!(text.lines().count(), 3);
    let csv = report::render_csv(&r);
    let data: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(data, ["landmark,volume_id,start_index,error_mm"]);
    let back = report::parse_csv(&csv, Path::new("r.csv")).unwrap();
    assert_eq!(back, r);
}

#[test]
fn csv_states_the_convention_and_columns() {
    let episodes = vec![EpisodeError {
        landmark: "AC".into(),
        volume_id: "test-000".into(),
        start_index: 0,
        error_mm: 1.25,
    }];
    let r = EvalReport::from_episodes(protocol(), &["AC".into()], episodes).unwrap();
    let csv = report::render_csv(&r);
    assert!(csv.lines().next().unwrap().contains("population"));
    assert!(csv.lines().any(|l| l == "AC,test-000,0,1.25"));
    assert_eq!(csv.lines().filter(|l| l.starts_with("# reference:")).count(), REFERENCE.len());
}

#[test]
fn reference_values_are_the_published_ones() {
    let find = |m: &str, l: &str| REFERENCE.iter().find(|r| r.method == m && r.landmark == l && r.dataset == "brain MRI").unwrap();
    assert_eq!((find("Collab DQN", "AC").mean, find("Collab DQN", "AC").std), (0.93, 0.18));
    assert_eq!((find("Collab DQN", "PC").mean, find("Collab DQN", "PC").std), (1.05, 0.25));
    let ap = REFERENCE.iter().find(|r| r.method == "Collab DQN" && r.landmark == "AP").unwrap();
    assert_eq!((ap.mean, ap.std), (3.96, 5.07));
}

#[test]
fn malformed_csv_is_rejected() {
    let p = Path::new("bad.csv");
    assert!(report::parse_csv("landmark,volume_id,start_index,error_mm\n", p).is_err());
    let header = "# protocol: starts_per_volume=19 max_frames=5 ladder=1 roi_extent=5\n";
    assert!(report::parse_csv(&format!("{header}a,b,c\n"), p).is_err());
    assert!(report::parse_csv(&format!("{header}landmark,volume_id,start_index,error_mm\nA,v,x,1.0\n"), p).is_err());
    assert!(report::parse_csv(&format!("{header}landmark,volume_id,start_index,error_mm\nA,v,0,1.0\n"), p).is_ok());
}

fn arb_report() -> impl Strategy<Value = EvalReport> {
    (1usize..4, 1usize..4, prop::collection::vec(0.0f64..100.0, 19 * 3 * 3)).prop_map(|(k, volumes, errors)| {
        let names: Vec<String> = (0..k).map(|j| format!("L{j}")).collect();
        let mut episodes = Vec::new();
        let mut e = errors.into_iter();
        for v in 0..volumes {
            for s in 0..19 {
                for n in &names {
                    episodes.push(EpisodeError {
                        landmark: n.clone(),
                        volume_id: format!("vol,{v}"),
                        start_index: s,
                        error_mm: e.next().unwrap() / 3.0,
                    });
                }
            }
        }
        EvalReport::from_episodes(protocol(), &names, episodes).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn csv_round_trip_is_exact(r in arb_report()) {
        let back = report::parse_csv(&report::render_csv(&r), Path::new("p.csv")).unwrap();
        prop_assert_eq!(back, r);
    }

    #[test]
    fn one_summary_row_per_landmark(r in arb_report()) {
        let text = report::render_summary(&r);
        for l in &r.landmarks {
            let row = format!("{}  {:.2} ± {:.2}", l.name, l.stats.mean, l.stats.std);
            prop_assert!(text.lines().any(|x| x == row));
        }
        prop_assert_eq!(text.lines().count(), 4 + r.landmarks.len());
    }
}
