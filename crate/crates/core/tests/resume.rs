use tapmobo::session::{parse_jsonl, SessionConfig, SessionState, Status};

fn config() -> SessionConfig {
    SessionConfig {
        seed: 8,
        n_seeds: 6,
        max_steps: 6,
        ..SessionConfig::default()
    }
}

#[test]
fn journal_resume_at_every_cut_matches_the_uninterrupted_run() {
    let mut full = SessionState::create(config()).unwrap();
    full.run().unwrap();
    full.final_scan().unwrap();
    let reference = full.journal_jsonl().unwrap();
    let records = parse_jsonl(&reference).unwrap();

    for cut in [1, 3, 6, 7, 10, records.len() - 1] {
        let mut s = SessionState::from_journal(&records[..cut]).unwrap();
        if s.status == Status::Seeding || s.status == Status::Active {
            s.run().unwrap();
        }
        s.final_scan().unwrap();
        assert_eq!(s.journal_jsonl().unwrap(), reference, "cut at {cut}");
        assert_eq!(s.final_scan, full.final_scan);
    }
}

#[test]
fn finalized_export_round_trips() {
    let mut s = SessionState::create(config()).unwrap();
    s.run().unwrap();
    s.final_scan().unwrap();
    let text = s.export_json().unwrap();
    let back = SessionState::import_json(&text).unwrap();
    assert_eq!(back.export_json().unwrap(), text);
    assert!(back.verify().ok());
    let replayed = SessionState::from_journal(&back.journal).unwrap();
    assert_eq!(replayed.export_json().unwrap(), text);
}

#[test]
fn observations_csv_has_one_row_per_observation() {
    let mut s = SessionState::create(config()).unwrap();
    s.run().unwrap();
    let csv = s.observations_csv();
    assert_eq!(csv.lines().count(), 1 + s.observations.len());
    assert!(csv.starts_with("iteration,drive_nm,setpoint_pct,i_gain,"));
}
