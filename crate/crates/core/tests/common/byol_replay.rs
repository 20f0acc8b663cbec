//! BYOL training with an independent replay of the target EMA recurrence.

use actissl_core::byol::{
    pretrain_autoencoder, train_byol_from, ByolConfig, ByolModel, MinMaxScaler,
};
use actissl_core::data::Window;
use actissl_core::nn::Network;
use sha2::{Digest, Sha256};

pub struct Replay {
    pub model: ByolModel,
    pub autoencoder_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
    pub steps: usize,
    /// Steps at which the replayed hash was compared.
    pub checked: Vec<usize>,
    /// Steps at which it differed.
    pub mismatched: Vec<usize>,
}

fn flatten(nets: [&Network; 2]) -> Vec<f64> {
    nets.iter()
        .flat_map(|n| n.params().flat_map(|p| p.value.data().to_vec()))
        .collect()
}

fn sha(values: &[f64]) -> [u8; 32] {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

/// Runs the same composition as `train_byol`, replaying
/// `xi <- beta * xi + (1 - beta) * theta` alongside and comparing parameter
/// hashes every `every` steps.
pub fn train_with_replay(
    windows: &[Window],
    config: &ByolConfig,
    seed: u64,
    every: usize,
) -> Replay {
    let scaler = MinMaxScaler::fit(windows).unwrap();
    let scaled: Vec<Window> = windows.iter().map(|w| scaler.apply(w)).collect();
    let (encoder, autoencoder_losses) = if config.autoencoder.enabled {
        let run = pretrain_autoencoder(
            &scaled,
            &config.architecture,
            &config.autoencoder,
            config.batch_size,
            seed,
        )
        .unwrap();
        (Some(run.autoencoder.encoder), run.epoch_losses)
    } else {
        (None, Vec::new())
    };
    let mut model = ByolModel::new(
        &config.architecture,
        scaler,
        windows[0].values.len(),
        encoder,
        seed,
    )
    .unwrap();
    let split = model.target_encoder.param_count();
    let mut xi = flatten([&model.target_encoder, &model.target_projector]);
    let beta = config.beta;
    let mut steps = 0;
    let mut checked = Vec::new();
    let mut mismatched = Vec::new();
    let epoch_losses = train_byol_from(&mut model, &scaled, config, seed, |record| {
        let theta = flatten([&record.model.encoder, &record.model.projector]);
        for (x, t) in xi.iter_mut().zip(&theta) {
            *x = beta * *x + (1.0 - beta) * t;
        }
        steps = record.step;
        if record.step % every == 0 {
            let mut h = Sha256::new();
            h.update(sha(&xi[..split]));
            h.update(sha(&xi[split..]));
            let replayed: [u8; 32] = h.finalize().into();
            checked.push(record.step);
            if replayed != record.model.target_digest() {
                mismatched.push(record.step);
            }
        }
    })
    .unwrap();
    Replay {
        model,
        autoencoder_losses,
        epoch_losses,
        steps,
        checked,
        mismatched,
    }
}
