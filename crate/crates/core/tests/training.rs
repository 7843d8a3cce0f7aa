use serde_json::Value;

use avse::synth::{synth_dataset, SyntheticDatasetSpec};
use avse::trainer::{fit, steps_per_epoch, StepRecord, TrainConfig};

const FIXTURE_REL_TOL: f64 = 1e-9;

fn mean_total(records: &[StepRecord]) -> f64 {
    records.iter().map(|r| r.loss.total).sum::<f64>() / records.len() as f64
}

#[test]
fn desk_schedule_reduces_loss_and_matches_fixture() {
    let fixture: Value = serde_json::from_str(include_str!("fixtures/desk_seed0.json")).unwrap();
    let data = synth_dataset(&SyntheticDatasetSpec::default()).unwrap();
    let config = TrainConfig::desk(data.grid(), 0);
    let state = fit(&config, &data).unwrap();

    let per_epoch = steps_per_epoch(&config, &data);
    assert_eq!(per_epoch as u64, fixture["steps_per_epoch"].as_u64().unwrap());
    assert_eq!(state.history.len() as u64, fixture["total_steps"].as_u64().unwrap());

    let first = mean_total(&state.history[..per_epoch]);
    let last = mean_total(&state.history[state.history.len() - per_epoch..]);
    assert!(last < first, "final epoch {last} should be below first epoch {first}");

    for (got, key) in [(first, "first_epoch_mean_loss"), (last, "final_epoch_mean_loss")] {
        let want = fixture[key].as_f64().unwrap();
        assert!(((got - want) / want).abs() < FIXTURE_REL_TOL, "{key}: {got} vs fixture {want}");
    }
    for rec in &state.history {
        assert_eq!(rec.loss.l_m + rec.loss.l_reg, rec.loss.total);
    }
}
