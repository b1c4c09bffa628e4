use p300_core::io::{save_recording_with, RecordingFormat, SaveOptions};
use p300_core::model::Condition;
use p300_core::sim::{gen_session_with, synth_recording, ErpTemplates, SynthConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::Ctx;
use crate::error::{usage_msg, write_err, CliResult, ResultExt};
use crate::run::num;

struct Session {
    snr: f64,
    subject_id: String,
    condition: Condition,
}

pub fn subject_id(snr: f64, subject: usize, multi_snr: bool) -> String {
    if multi_snr {
        format!("snr{}-s{subject:02}", num(snr))
    } else {
        format!("s{subject:02}")
    }
}

/// One session per (SNR, subject, condition); session `k` draws from stream
/// `k` of the seed.
pub fn run(ctx: &mut Ctx) -> CliResult<()> {
    let cfg = ctx.cfg;
    let sim = &cfg.simulate;
    let seed = cfg.require_seed("simulate")?;
    if sim.n_subjects == 0 {
        return Err(usage_msg("n_subjects must be at least 1"));
    }
    if sim.snr.is_empty() {
        return Err(usage_msg("at least one SNR is required"));
    }
    let conditions: Vec<Condition> = [Condition::Pc, Condition::Vr].into_iter().filter(|c| cfg.keeps(*c)).collect();
    let multi = sim.snr.len() > 1;
    let mut sessions = Vec::new();
    for &snr in &sim.snr {
        for s in 1..=sim.n_subjects {
            for &condition in &conditions {
                sessions.push(Session {
                    snr,
                    subject_id: subject_id(snr, s, multi),
                    condition,
                });
            }
        }
    }
    log::info!("simulating {} sessions with seed {seed}", sessions.len());

    let rows = sessions
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let schedule = gen_session_with(&mut rng, sim.timing, sim.schedule)?;
            let synth = SynthConfig {
                subject_id: s.subject_id.clone(),
                condition: s.condition,
                sample_rate: sim.sample_rate,
                noise_rms_uv: sim.noise_rms_uv,
                latency_ms: Some(cfg.latency.latency_ms(s.condition)),
            };
            let templates = ErpTemplates::for_condition(s.condition);
            let rec = synth_recording(&schedule, &templates, s.snr, &synth, &mut rng)
                .ctx(format!("simulating {} {}", s.subject_id, s.condition))?;
            let name = format!("{}_{}", s.subject_id, s.condition);
            let data = ctx.run.path(&format!("recordings/{name}.bin"))?;
            save_recording_with(&rec, &data, RecordingFormat::ColumnarBinary, SaveOptions { sample_type: sim.sample_type })
                .map_err(write_err)?;
            ctx.run.write_json(&format!("schedules/{name}.json"), &schedule)?;
            Ok(vec![
                s.subject_id.clone(),
                s.condition.to_string(),
                num(s.snr),
                k.to_string(),
                format!("recordings/{name}.bin"),
                rec.events().len().to_string(),
                rec.n_samples().to_string(),
            ])
        })
        .collect::<CliResult<Vec<_>>>()?;
    ctx.run.write_csv(
        "corpus.csv",
        &["subject", "condition", "snr", "stream", "file", "n_events", "n_samples"],
        &rows,
    )
}
