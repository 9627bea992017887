//! Interrupt a session, persist its journal, rebuild it and carry on; then
//! tamper with one reward and let `verify` find it.

use tapmobo::session::{parse_jsonl, JournalRecord, SessionConfig, SessionState};

fn main() -> tapmobo::Result<()> {
    let cfg = SessionConfig {
        max_steps: 5,
        ..SessionConfig::default()
    };
    let mut s = SessionState::create(cfg.clone())?;
    s.run_seeding()?;
    s.step()?;
    let dir = std::env::temp_dir().join("tapmobo-journal-replay");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("session.jsonl");
    std::fs::write(&path, s.journal_jsonl()?)?;
    println!("wrote {} records to {}", s.journal.len(), path.display());

    let mut resumed = SessionState::from_journal(&parse_jsonl(&std::fs::read_to_string(&path)?)?)?;
    resumed.run()?;
    let mut straight = SessionState::create(cfg)?;
    straight.run()?;
    println!(
        "resumed journal identical to uninterrupted run: {}",
        resumed.journal_jsonl()? == straight.journal_jsonl()?
    );

    let mut records = parse_jsonl(&resumed.journal_jsonl()?)?;
    if let Some(JournalRecord::Step(r)) = records.iter_mut().rev().find(|r| matches!(r, JournalRecord::Step(_))) {
        r.observation.rewards.values[0] *= 1.01;
    }
    let report = SessionState::from_journal(&records)?.verify();
    println!("tampered journal: {} problem(s)", report.problems.len());
    for p in &report.problems {
        println!("  {p}");
    }
    Ok(())
}
