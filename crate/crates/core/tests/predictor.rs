mod common;

use std::sync::Arc;

use dancegen_core::cau::*;
use dancegen_core::motion::{MotionClip, MotionFrame, Skeleton};
use dancegen_core::music::{MusicFeaturePack, Song};
use dancegen_core::nn::{Checkpoint, Graph, Tensor};
use dancegen_core::predictor::*;
use dancegen_core::Error;
use proptest::prelude::*;
use rand::Rng;

fn catalog(beats: &[usize]) -> CauCatalog {
    let sk = Arc::new(Skeleton::desk_default());
    let caus = beats
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let clip = MotionClip::new(sk.clone(), 80.0, vec![MotionFrame::rest(8, 0.9); 40 * b]).unwrap();
            CatalogEntry::cau(format!("cau_{i}"), b, format!("clips/cau_{i}.toml"), clip)
        })
        .collect();
    CauCatalog::from_caus(caus).unwrap()
}

/// A song of `beats` beats at 120 bpm with a one-hot chroma cue per beat.
fn song_pack(beats: usize, seed: u64) -> MusicFeaturePack {
    let n = beats * 50;
    let tc = n / 10;
    let mut r = common::rng(seed);
    let mut chroma = vec![0.0; 12 * tc];
    for c in 0..tc {
        chroma[(c / 5 + seed as usize) % 12 * tc + c] = 1.0;
        chroma[r.gen_range(0..12) * tc + c] += 0.1;
    }
    let beat = (0..n).map(|i| if i % 50 == 0 { 1.0 } else { 0.0 }).collect();
    MusicFeaturePack::new(chroma, beat, vec![0.0; n]).unwrap()
}

fn small_config(vocab: usize) -> PredictorConfig {
    PredictorConfig {
        conv: (0..5)
            .map(|_| ConvSpec {
                channels: 3,
                kernel: 3,
                stride: 2,
            })
            .collect(),
        music_dim: 4,
        embed_dim: 5,
        hidden: 4,
        vocab,
        window_seconds: 0.5,
    }
}

struct Stub<F: FnMut(usize, f64) -> Vec<f64>>(F);

impl<F: FnMut(usize, f64) -> Vec<f64>> StepDecoder for Stub<F> {
    fn reset(&mut self) {}
    fn step(&mut self, prev: usize, _pack: &MusicFeaturePack, t: f64) -> dancegen_core::Result<Vec<f64>> {
        Ok((self.0)(prev, t))
    }
}

fn one_hot(v: usize, k: usize) -> Vec<f64> {
    let mut d = vec![0.0; v];
    d[k] = 1.0;
    d
}

#[test]
fn default_encoder_maps_ten_second_window_to_64() {
    let cfg = PredictorConfig::new(8);
    assert_eq!(cfg.window_width(), 1000);
    assert_eq!(cfg.encoder_length().unwrap(), 28);
    let model = CauPredictor::new(cfg.clone(), &mut common::rng(1)).unwrap();
    let w = song_pack(20, 0).window(3.0, 5.0).unwrap();
    let a = model.encode(&w).unwrap();
    assert_eq!(a.len(), 64);
    let again = CauPredictor::new(cfg.clone(), &mut common::rng(1)).unwrap().encode(&w).unwrap();
    assert_eq!(a, again);
    let zero = CauPredictor::zeroed(cfg).unwrap();
    assert!(zero.encode(&w).unwrap().iter().all(|&v| v == 0.0));
}

#[test]
fn wrong_window_width_is_a_dimension_error() {
    let model = CauPredictor::new(PredictorConfig::new(8), &mut common::rng(1)).unwrap();
    let w = song_pack(20, 0).window(3.0, 4.0).unwrap();
    assert!(matches!(model.encode(&w), Err(Error::Dimension { .. })));
}

#[test]
fn decode_step_gives_a_distribution() {
    let model = CauPredictor::new(PredictorConfig::new(9), &mut common::rng(2)).unwrap();
    let m: Vec<f64> = (0..64).map(|i| (i as f64).sin()).collect();
    let (dist, h) = model.decode_step(SOD, &m, &[0.0; 64]).unwrap();
    assert_eq!(h.len(), 64);
    assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(dist.iter().all(|&p| p > 0.0 && p < 1.0));
    assert!(matches!(model.decode_step(9, &m, &[0.0; 64]), Err(Error::Validation(_))));

    let zero = CauPredictor::zeroed(PredictorConfig::new(9)).unwrap();
    let (dist, _) = zero.decode_step(4, &m, &[0.3; 64]).unwrap();
    let entropy: f64 = -dist.iter().map(|p| p * p.ln()).sum::<f64>();
    assert!((entropy - 9f64.ln()).abs() < 1e-12);
}

#[test]
fn teacher_forced_step_matches_finite_differences() {
    let cfg = small_config(6);
    let pack = song_pack(8, 3);
    for seed in 0..5 {
        let mut model = CauPredictor::new(cfg.clone(), &mut common::rng(seed)).unwrap();
        let mut r = common::rng(100 + seed);
        for (_, t) in model.params.iter_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = r.gen_range(-0.4..0.4));
        }
        let windows: Vec<Tensor> = [0.4, 1.3].iter().map(|&t| pack.window(t, 0.5).unwrap()).collect();
        let err = common::param_gradient_error(&model.params, 1e-5, |g, p| {
            model.sequence_loss(g, p, &windows, &[4, 5])
        });
        assert!(err < 1e-4, "seed {seed}: {err}");
    }
}

#[test]
fn untrained_loss_is_near_uniform() {
    let cat = catalog(&[2, 3, 2, 1, 4]);
    let v = cat.len() as f64;
    let seq = CauSequence::from_tokens(&[3, NIL, 5, 4, EOD], &cat).unwrap();
    let song = Song {
        name: "s".into(),
        pack: song_pack(9, 1),
        sequence: seq,
    };
    let model = CauPredictor::new(PredictorConfig::new(cat.len()), &mut common::rng(5)).unwrap();
    let steps = vec![song_steps(&song, 5.0).unwrap()];
    let loss = evaluate_loss(&model, &steps).unwrap();
    let want = 5.0 * v.ln();
    assert!((loss - want).abs() < 0.25 * want, "loss {loss} vs {want}");
}

#[test]
fn two_token_song_is_memorised() {
    let cat = catalog(&[2]);
    let song = Song {
        name: "only".into(),
        pack: song_pack(2, 0),
        sequence: CauSequence::from_tokens(&[3, EOD], &cat).unwrap(),
    };
    let hyper = PredictorTraining {
        epochs: 400,
        target_loss: Some(0.005),
        ..PredictorTraining::default()
    };
    let (model, log) = train_predictor(&[song.clone()], &cat, PredictorConfig::new(4), &hyper, 0).unwrap();
    let steps = vec![song_steps(&song, 5.0).unwrap()];
    let final_loss = evaluate_loss(&model, &steps).unwrap();
    assert!(final_loss < 0.01, "loss {final_loss} after {} epochs", log.epoch_loss.len());
    assert!(log.best_loss < 0.01);
    let running_best: Vec<f64> = log
        .epoch_loss
        .iter()
        .scan(f64::INFINITY, |b, &l| {
            *b = b.min(l);
            Some(*b)
        })
        .collect();
    assert!(running_best.windows(2).all(|w| w[1] <= w[0]));
    assert_eq!(strip_specials(&generate(&model, &song.pack, &cat).unwrap().tokens()), vec![3]);
}

#[test]
fn song_without_beats_is_a_data_error() {
    let cat = catalog(&[2]);
    let song = Song {
        name: "silent".into(),
        pack: MusicFeaturePack::new(vec![0.0; 12 * 20], vec![0.0; 200], vec![0.0; 200]).unwrap(),
        sequence: CauSequence::from_tokens(&[3, EOD], &cat).unwrap(),
    };
    let err = train_predictor(&[song], &cat, PredictorConfig::new(4), &PredictorTraining::default(), 0).unwrap_err();
    assert!(matches!(err, Error::Data(ref m) if m.contains("silent")), "{err}");
}

#[test]
fn checkpoint_round_trip_and_mismatch() {
    let model = CauPredictor::new(small_config(6), &mut common::rng(7)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    model.to_checkpoint().unwrap().save(dir.path()).unwrap();
    let back = CauPredictor::from_checkpoint(&Checkpoint::load(dir.path()).unwrap()).unwrap();
    assert_eq!(back.params.names().collect::<Vec<_>>(), model.params.names().collect::<Vec<_>>());
    for (name, t) in model.params.iter() {
        assert_eq!(back.params.get(name).unwrap().data(), t.data());
    }
    let mut ckpt = model.to_checkpoint().unwrap();
    ckpt.set_config(&small_config(7)).unwrap();
    assert!(matches!(CauPredictor::from_checkpoint(&ckpt), Err(Error::Validation(_))));
    let cat = catalog(&[1, 1]);
    assert!(matches!(generate(&model, &song_pack(4, 0), &cat), Err(Error::Validation(_))));
}

#[test]
fn stub_emitting_eod_stops_immediately() {
    let cat = catalog(&[4]);
    let mut stub = Stub(|_, _| one_hot(4, EOD));
    let g = generate_with(&mut stub, &song_pack(10, 0), &cat, &DecodeOptions::default()).unwrap();
    assert_eq!(g.sequence.tokens(), vec![EOD]);
}

#[test]
fn stub_emitting_four_beat_caus_covers_ten_beats_with_three() {
    let cat = catalog(&[4]);
    let mut stub = Stub(|_, _| one_hot(4, 3));
    let g = generate_with(&mut stub, &song_pack(10, 0), &cat, &DecodeOptions::default()).unwrap();
    assert_eq!(g.sequence.tokens(), vec![3, 3, 3]);
    assert_eq!(g.times, vec![0.0, 2.0, 4.0]);
}

#[test]
fn stub_emitting_nil_waits_every_beat() {
    let cat = catalog(&[4]);
    let mut stub = Stub(|_, _| one_hot(4, NIL));
    let g = generate_with(&mut stub, &song_pack(8, 0), &cat, &DecodeOptions::default()).unwrap();
    assert_eq!(g.sequence.tokens(), vec![NIL; 8]);
}

#[test]
fn sod_is_never_emitted_and_history_is_passed() {
    let cat = catalog(&[1, 2]);
    let mut seen = Vec::new();
    let mut stub = Stub(|prev, _| {
        seen.push(prev);
        one_hot(5, SOD).iter().map(|p| p + 0.1).collect()
    });
    let g = generate_with(&mut stub, &song_pack(3, 0), &cat, &DecodeOptions::default()).unwrap();
    assert!(!g.sequence.tokens().contains(&SOD));
    assert_eq!(seen[0], SOD);
    assert_eq!(seen[1..], g.sequence.tokens()[..seen.len() - 1]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn generation_terminates_and_tiles(seed in 0u64..10_000, beats in 1usize..24, temp in prop::option::of(0.3f64..3.0)) {
        let cat = catalog(&[1, 2, 3, 4]);
        let mut r = common::rng(seed);
        let mut stub = Stub(move |_, _| (0..cat_len()).map(|_| r.gen_range(0.0..1.0)).collect());
        let opts = DecodeOptions { temperature: temp, seed };
        let g = generate_with(&mut stub, &song_pack(beats, 0), &cat, &opts).unwrap();
        prop_assert!(g.times.windows(2).all(|w| w[1] > w[0]));
        let mut next = 0;
        for item in &g.sequence.items {
            prop_assert_eq!(item.start_beat, next);
            next = item.end_beat;
        }
        prop_assert!(g.sequence.len() <= beats + 1);
    }
}

fn cat_len() -> usize {
    7
}


#[test]
fn resumed_training_matches_uninterrupted_run() {
    let cat = catalog(&[1, 2]);
    let song = Song {
        name: "r".into(),
        pack: song_pack(6, 2),
        sequence: CauSequence::from_tokens(&[3, 4, NIL, 3, 3, EOD], &cat).unwrap(),
    };
    let hyper = PredictorTraining { epochs: 6, patience: 0, ..Default::default() };
    let cfg = PredictorConfig::new(cat.len());
    let (straight, log) = train_predictor(&[song.clone()], &cat, cfg.clone(), &hyper, 5).unwrap();

    let mut first = PredictorTrainer::new(&[song.clone()], &cat, cfg, &hyper, 5).unwrap();
    for _ in 0..3 {
        first.run_epoch().unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    first.checkpoint().unwrap().save(dir.path()).unwrap();
    let ckpt = Checkpoint::load(dir.path()).unwrap();
    let mut resumed = PredictorTrainer::resume(&ckpt, &[song], &cat, &hyper).unwrap();
    assert_eq!(resumed.epoch(), 3);
    while !resumed.done() {
        resumed.run_epoch().unwrap();
    }
    let (model, rlog) = resumed.finish();
    assert_eq!(rlog, log);
    assert_eq!(model, straight);
}
