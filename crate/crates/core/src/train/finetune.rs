use std::collections::BTreeMap;

use super::{evaluate, train, EpochMetrics, TrainConfig, TrainError};
use crate::autograd::Scalar;
use crate::dataset::{Dataset, Split};
use crate::zoo::{FusionStrategy, Modality, NetKind, Network, ParamGroup, StreamConfig};

/// Stage 1 trains each stream alone; stage 2 (optional) trains only the
/// fusion part of the joint network with both streams frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSchedule {
    pub strategy: FusionStrategy,
    pub image: TrainConfig,
    pub audio: TrainConfig,
    pub stage2: Option<TrainConfig>,
}

#[derive(Debug, Clone)]
pub struct TwoStageOutcome<T> {
    pub image_stream: Network<T>,
    pub audio_stream: Network<T>,
    pub fused: Network<T>,
    pub image_metrics: Vec<EpochMetrics>,
    pub audio_metrics: Vec<EpochMetrics>,
    pub stage2_metrics: Vec<EpochMetrics>,
    /// Test accuracy of each stream after stage 1.
    pub image_accuracy: f64,
    pub audio_accuracy: f64,
    /// Test accuracy of the joint network after stage 2 (or right after
    /// the transplant when stage 2 is skipped).
    pub fused_accuracy: f64,
    /// Per-layer digests of the joint network before and after stage 2.
    pub digests_before: BTreeMap<String, String>,
    pub digests_after: BTreeMap<String, String>,
    /// Parameter names left trainable during stage 2.
    pub trainable: Vec<String>,
}

impl<T> TwoStageOutcome<T> {
    pub fn best_unimodal_accuracy(&self) -> f64 {
        self.image_accuracy.max(self.audio_accuracy)
    }
}

/// Whether `name` stays trainable in stage 2. Learned heads train alone;
/// a parameterless head trains each stream's final fc8 instead.
fn stage2_trainable(strategy: FusionStrategy, group: ParamGroup, name: &str) -> bool {
    match group {
        ParamGroup::FusionHead => true,
        ParamGroup::ImageStream | ParamGroup::AudioStream => {
            strategy.is_parameterless() && name.split('.').nth(1) == Some("fc8")
        }
    }
}

fn transplant<T: Scalar>(fused: &mut Network<T>, stream: &Network<T>, group: ParamGroup) -> Result<(), TrainError> {
    let names: Vec<String> = fused.group_names(group).iter().cloned().collect();
    for name in &names {
        let src = stream.params.tensor(name).map_err(|_| TrainError::Transplant {
            name: name.clone(),
            reason: "missing from the trained stream".into(),
        })?;
        let dst = fused.params.tensor(name)?;
        if src.shape() != dst.shape() {
            return Err(TrainError::Transplant {
                name: name.clone(),
                reason: format!("shape {:?} vs {:?}", src.shape(), dst.shape()),
            });
        }
    }
    fused.params.copy_from(&stream.params, names.iter().map(String::as_str))?;
    Ok(())
}

pub fn two_stage_finetune<T: Scalar>(
    sched: &StageSchedule,
    cfg: &StreamConfig,
    data: &Dataset<T>,
) -> Result<TwoStageOutcome<T>, TrainError> {
    if sched.strategy == FusionStrategy::EarlyConcat {
        return Err(TrainError::Config(
            "early fusion shares one stream, so there is nothing to train separately".into(),
        ));
    }
    let test = data.split(Split::Test);
    let mut image_stream = Network::build(NetKind::Unimodal(Modality::Image), cfg, sched.image.seed)?;
    let image_metrics = train(&mut image_stream, data, &sched.image)?.metrics;
    let mut audio_stream = Network::build(NetKind::Unimodal(Modality::Audio), cfg, sched.audio.seed)?;
    let audio_metrics = train(&mut audio_stream, data, &sched.audio)?.metrics;
    let acc = |net: &Network<T>| -> Result<f64, TrainError> {
        if test.is_empty() {
            return Err(TrainError::EmptySplit(Split::Test));
        }
        Ok(evaluate(net, &test)?.accuracy)
    };
    let image_accuracy = acc(&image_stream)?;
    let audio_accuracy = acc(&audio_stream)?;

    let head_seed = sched.stage2.as_ref().map_or(sched.image.seed, |c| c.seed);
    let mut fused = Network::build(NetKind::Fusion(sched.strategy), cfg, head_seed)?;
    transplant(&mut fused, &image_stream, ParamGroup::ImageStream)?;
    transplant(&mut fused, &audio_stream, ParamGroup::AudioStream)?;
    let names: Vec<String> = fused.params.names().map(String::from).collect();
    let mut trainable = Vec::new();
    for name in &names {
        let group = fused.group_of(name).expect("every parameter has a group");
        let keep = stage2_trainable(sched.strategy, group, name);
        fused.params.set_trainable(name, keep)?;
        if keep {
            trainable.push(name.clone());
        }
    }
    let digests_before = fused.params.layer_digests();
    let stage2_metrics = match &sched.stage2 {
        Some(c) => train(&mut fused, data, c)?.metrics,
        None => Vec::new(),
    };
    let digests_after = fused.params.layer_digests();
    let fused_accuracy = acc(&fused)?;
    Ok(TwoStageOutcome {
        image_stream,
        audio_stream,
        fused,
        image_metrics,
        audio_metrics,
        stage2_metrics,
        image_accuracy,
        audio_accuracy,
        fused_accuracy,
        digests_before,
        digests_after,
        trainable,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage2_trainable_sets() {
        let img = ParamGroup::ImageStream;
        assert!(stage2_trainable(FusionStrategy::LateSum, img, "img.fc8.weight"));
        assert!(!stage2_trainable(FusionStrategy::LateSum, img, "img.fc7.weight"));
        assert!(!stage2_trainable(FusionStrategy::LateFc7Concat, img, "img.fc7.bias"));
        assert!(stage2_trainable(FusionStrategy::LateFc7Concat, ParamGroup::FusionHead, "fusion.fc6.bias"));
        assert!(!stage2_trainable(FusionStrategy::MidConcat, ParamGroup::AudioStream, "aud.conv5.weight"));
    }
}
