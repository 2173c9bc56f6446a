//! The attention-augmented residual encoder-decoder over packed k-space
//! channels, its two U-Net baselines, and parameter accounting.

mod checkpoint;
mod recon;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use recon::{
    input_channel_response, loss_mse, normalize_per_slice_group, pack_model_input, reconstruct,
    zero_filled, ImageDomainMseObjective,
};
pub use train::{train, EpochLoss, TrainHyper, TrainOutput, TrainSet, TrainVolume};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{NetworkGraph, NodeId};
use crate::error::{Error, Result};
use crate::kspace::packed_channel_count;

/// Which network to build: the attention model or one of the two plain
/// U-Net baselines.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Acnn,
    KspaceUnet,
    ImageUnet,
}

/// Order in which the two attention layers combine inside a block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionMode {
    /// Both layers applied to the block input, fused by elementwise max.
    Parallel,
    ChannelThenFrequency,
    FrequencyThenChannel,
}

/// Which attention branches a block carries (the ablation axis).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AttentionSetting {
    None,
    ChannelOnly,
    FrequencyOnly,
    Both(AttentionMode),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Neighborhood half-width; the network consumes 2s+1 slices.
    pub s: usize,
    pub n_coils: usize,
    pub encoder_widths: Vec<usize>,
    pub bottleneck_width: usize,
    pub final_hidden_width: usize,
    pub attention: AttentionSetting,
    pub input_size: usize,
}

impl ModelConfig {
    /// Full-scale widths: first conv width 64 (Table-1 slope 1152 = 2*64*9)
    /// and final hidden width 32 (slope 64 = 32*2).
    pub fn full(kind: ModelKind, s: usize, n_coils: usize, input_size: usize) -> Self {
        ModelConfig {
            kind,
            s,
            n_coils,
            encoder_widths: vec![64, 128, 256, 512],
            bottleneck_width: 1024,
            final_hidden_width: 32,
            attention: if kind == ModelKind::Acnn {
                AttentionSetting::Both(AttentionMode::Parallel)
            } else {
                AttentionSetting::None
            },
            input_size,
        }
    }

    /// Desk-scale configuration: same topology, testable in minutes.
    pub fn toy(kind: ModelKind, s: usize, n_coils: usize) -> Self {
        ModelConfig {
            kind,
            s,
            n_coils,
            encoder_widths: vec![16, 32, 64],
            bottleneck_width: 128,
            final_hidden_width: 8,
            attention: if kind == ModelKind::Acnn {
                AttentionSetting::Both(AttentionMode::Parallel)
            } else {
                AttentionSetting::None
            },
            input_size: 64,
        }
    }

    pub fn n_slices(&self) -> usize {
        2 * self.s + 1
    }

    pub fn input_channels(&self) -> usize {
        match self.kind {
            ModelKind::ImageUnet => 2 * self.n_coils,
            _ => packed_channel_count(self.n_slices(), self.n_coils),
        }
    }

    pub fn output_channels(&self) -> usize {
        2 * self.n_coils
    }

    pub fn pool_levels(&self) -> usize {
        self.encoder_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder_widths.is_empty() {
            return Err(Error::InvalidConfig("need at least one encoder stage".into()));
        }
        if self.n_coils == 0 {
            return Err(Error::InvalidConfig("need at least one coil".into()));
        }
        let divisor = 1usize << self.pool_levels();
        if self.input_size == 0 || self.input_size % divisor != 0 {
            return Err(Error::InvalidConfig(format!(
                "input size {} is not divisible by 2^{} = {}",
                self.input_size,
                self.pool_levels(),
                divisor
            )));
        }
        if self.kind != ModelKind::Acnn && self.attention != AttentionSetting::None {
            return Err(Error::InvalidConfig(
                "attention blocks appear only in the acnn kind".into(),
            ));
        }
        if self.kind == ModelKind::ImageUnet && self.s != 0 {
            return Err(Error::InvalidConfig(
                "the image-domain baseline consumes a single input slice".into(),
            ));
        }
        Ok(())
    }
}

/// A built network together with the configuration that produced it.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub graph: NetworkGraph,
    pub init_seed: u64,
}

/// Frequency attention (a sigmoid 1x1-conv map over all channels) applied
/// multiplicatively: returns (S_f node, Y_f node).
pub fn frequency_attention(
    g: &mut NetworkGraph,
    x: NodeId,
    rng: &mut ChaCha8Rng,
    name: &str,
) -> Result<(NodeId, NodeId)> {
    let conv = g.conv2d(x, 1, 1, 1, 0, true, rng, &format!("{name}.freq"))?;
    let s_f = g.sigmoid(conv, &format!("{name}.freq.sigmoid"))?;
    g.attention_map_nodes.push(s_f);
    let y_f = g.mul_broadcast(x, s_f, &format!("{name}.freq.scale"))?;
    Ok((s_f, y_f))
}

/// Channel attention: squeeze each channel to its L1 norm, gate through a
/// square fully connected map and a sigmoid: returns (S_c node, Y_c node).
pub fn channel_attention(
    g: &mut NetworkGraph,
    x: NodeId,
    channels: usize,
    rng: &mut ChaCha8Rng,
    name: &str,
) -> Result<(NodeId, NodeId)> {
    let squeeze = g.l1_reduce_per_channel(x, &format!("{name}.chan.squeeze"))?;
    let fc = g.linear(squeeze, channels, false, rng, &format!("{name}.chan"))?;
    let s_c = g.sigmoid(fc, &format!("{name}.chan.sigmoid"))?;
    let y_c = g.mul_broadcast(x, s_c, &format!("{name}.chan.scale"))?;
    Ok((s_c, y_c))
}

/// One attention block in any of its variants; `None` passes features
/// through untouched.
pub fn attention_block(
    g: &mut NetworkGraph,
    x: NodeId,
    channels: usize,
    setting: AttentionSetting,
    rng: &mut ChaCha8Rng,
    name: &str,
) -> Result<NodeId> {
    match setting {
        AttentionSetting::None => Ok(x),
        AttentionSetting::ChannelOnly => Ok(channel_attention(g, x, channels, rng, name)?.1),
        AttentionSetting::FrequencyOnly => Ok(frequency_attention(g, x, rng, name)?.1),
        AttentionSetting::Both(AttentionMode::Parallel) => {
            let (_, y_c) = channel_attention(g, x, channels, rng, name)?;
            let (_, y_f) = frequency_attention(g, x, rng, name)?;
            g.elementwise_max(y_c, y_f, &format!("{name}.maxout"))
        }
        AttentionSetting::Both(AttentionMode::ChannelThenFrequency) => {
            let (_, y_c) = channel_attention(g, x, channels, rng, name)?;
            Ok(frequency_attention(g, y_c, rng, name)?.1)
        }
        AttentionSetting::Both(AttentionMode::FrequencyThenChannel) => {
            let (_, y_f) = frequency_attention(g, x, rng, name)?;
            Ok(channel_attention(g, y_f, channels, rng, name)?.1)
        }
    }
}

/// conv(3x3) -> ReLU -> BN, `repeats` times at the given width.
fn stage(
    g: &mut NetworkGraph,
    mut x: NodeId,
    width: usize,
    repeats: usize,
    rng: &mut ChaCha8Rng,
    name: &str,
) -> Result<NodeId> {
    for r in 0..repeats {
        x = g.conv2d(x, width, 3, 1, 1, true, rng, &format!("{name}.conv{r}"))?;
        x = g.relu(x, &format!("{name}.relu{r}"))?;
        x = g.batch_norm2d(x, rng, &format!("{name}.bn{r}"))?;
    }
    Ok(x)
}

/// Build the encoder-decoder. For k-space kinds the network output is added
/// onto the 2n channels of the center slice of the packed input; the
/// image-domain baseline emits its prediction directly.
pub fn build_model(config: &ModelConfig, init_seed: u64) -> Result<Model> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
    let size = config.input_size;
    let mut g = NetworkGraph::new(config.input_channels(), size, size);
    let att = config.attention;

    let mut x = g.input_node();
    let mut skips: Vec<NodeId> = Vec::new();
    for (i, &width) in config.encoder_widths.iter().enumerate() {
        x = stage(&mut g, x, width, 2, &mut rng, &format!("enc{i}"))?;
        x = attention_block(&mut g, x, width, att, &mut rng, &format!("enc{i}.att"))?;
        skips.push(x);
        x = g.max_pool2d(x, 2, 2, &format!("pool{i}"))?;
    }

    x = stage(&mut g, x, config.bottleneck_width, 2, &mut rng, "bottleneck")?;
    x = attention_block(
        &mut g,
        x,
        config.bottleneck_width,
        att,
        &mut rng,
        "bottleneck.att",
    )?;

    for (i, &width) in config.encoder_widths.iter().enumerate().rev() {
        x = g.conv2d_transpose(x, width, 2, 2, true, &mut rng, &format!("dec{i}.up"))?;
        x = g.concat(&[x, skips[i]], &format!("dec{i}.skip"))?;
        x = stage(&mut g, x, width, 2, &mut rng, &format!("dec{i}"))?;
        if i > 0 {
            x = attention_block(&mut g, x, width, att, &mut rng, &format!("dec{i}.att"))?;
        }
    }

    x = stage(&mut g, x, config.final_hidden_width, 1, &mut rng, "final")?;
    let prediction = g.conv2d(x, config.output_channels(), 1, 1, 0, false, &mut rng, "out")?;
    // The interpolation head starts at zero so optimization begins exactly
    // at the zero-filled solution; anything it learns is a correction.
    if let Some(idx) = g.param_index("out.weight") {
        g.params_mut()[idx].values.iter_mut().for_each(|v| *v = 0.0);
    }

    let output = match config.kind {
        ModelKind::ImageUnet => prediction,
        _ => {
            // Residual interpolation: add onto the slice under
            // reconstruction (the center group of the packed input).
            let start = config.s * config.output_channels();
            let center = g.slice_channels(
                g.input_node(),
                start,
                config.output_channels(),
                "residual.center",
            )?;
            g.add(prediction, center, "residual.add")?
        }
    };
    g.set_output(output);

    Ok(Model {
        config: config.clone(),
        graph: g,
        init_seed,
    })
}

/// Total trainable parameter elements of a built graph.
pub fn count_params(graph: &NetworkGraph) -> usize {
    graph.count_params()
}

/// Zero the final interpolation layer so a k-space model reproduces the
/// zero-filled pipeline exactly.
pub fn zero_final_layer(model: &mut Model) {
    if let Some(idx) = model.graph.param_index("out.weight") {
        for v in model.graph.params_mut()[idx].values.iter_mut() {
            *v = 0.0;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Mode;
    use crate::tensor::Tensor;
    use rand::Rng;

    fn zero_param(g: &mut NetworkGraph, name: &str) {
        let idx = g.param_index(name).expect(name);
        g.params_mut()[idx].values.iter_mut().for_each(|v| *v = 0.0);
    }

    #[test]
    fn frequency_attention_with_zero_weights_halves_features() {
        let mut g = NetworkGraph::new(3, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = g.input_node();
        let (s_f, y_f) = frequency_attention(&mut g, x0, &mut rng, "att").unwrap();
        zero_param(&mut g, "att.freq.weight");
        zero_param(&mut g, "att.freq.bias");
        let mut data = vec![0.0f32; 3 * 16];
        let mut r = ChaCha8Rng::seed_from_u64(2);
        data.iter_mut().for_each(|v| *v = r.gen_range(-1.0..1.0));
        let input = Tensor::from_vec(1, 3, 4, 4, data).unwrap();
        let exec = g.forward(&input, Mode::Eval).unwrap();
        for v in exec.value(s_f).unwrap().data() {
            assert_eq!(*v, 0.5);
        }
        for (y, x) in exec.value(y_f).unwrap().data().iter().zip(input.data()) {
            assert!((y - 0.5 * x).abs() < 1e-7);
        }
    }

    #[test]
    fn frequency_attention_single_channel_example() {
        // sigma(1) and sigma(-1) applied multiplicatively to [1, -1].
        let mut g = NetworkGraph::new(1, 1, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x0 = g.input_node();
        let (s_f, y_f) = frequency_attention(&mut g, x0, &mut rng, "att").unwrap();
        let w = g.param_index("att.freq.weight").unwrap();
        g.params_mut()[w].values[0] = 1.0;
        zero_param(&mut g, "att.freq.bias");
        let input = Tensor::from_vec(1, 1, 1, 2, vec![1.0, -1.0]).unwrap();
        let exec = g.forward(&input, Mode::Eval).unwrap();
        let s = exec.value(s_f).unwrap();
        assert!((s.data()[0] - 0.731_058_6).abs() < 1e-4);
        assert!((s.data()[1] - 0.268_941_4).abs() < 1e-4);
        let y = exec.value(y_f).unwrap();
        assert!((y.data()[0] - 0.731_058_6).abs() < 1e-4);
        assert!((y.data()[1] + 0.268_941_4).abs() < 1e-4);
    }

    #[test]
    fn attention_maps_stay_strictly_inside_unit_interval() {
        let mut g = NetworkGraph::new(4, 6, 6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x0 = g.input_node();
        let (s_f, _) = frequency_attention(&mut g, x0, &mut rng, "f").unwrap();
        let (s_c, _) = channel_attention(&mut g, x0, 4, &mut rng, "c").unwrap();
        // Moderate amplitudes: in f32 the sigmoid saturates to exactly 1.0
        // once the squeezed pre-activation passes ~17, so probe the open
        // interval where it is representable.
        let mut r = ChaCha8Rng::seed_from_u64(4);
        let data = (0..4 * 36).map(|_| r.gen_range(-0.05..0.05)).collect();
        let input = Tensor::from_vec(1, 4, 6, 6, data).unwrap();
        let exec = g.forward(&input, Mode::Eval).unwrap();
        for node in [s_f, s_c] {
            for v in exec.value(node).unwrap().data() {
                assert!(*v > 0.0 && *v < 1.0);
            }
        }
    }

    #[test]
    fn channel_attention_zero_and_identity_weight_examples() {
        let mut g = NetworkGraph::new(2, 2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0 = g.input_node();
        let (s_c, y_c) = channel_attention(&mut g, x0, 2, &mut rng, "att").unwrap();
        let input = Tensor::from_vec(
            1,
            2,
            2,
            2,
            vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0],
        )
        .unwrap();

        zero_param(&mut g, "att.chan.weight");
        let exec = g.forward(&input, Mode::Eval).unwrap();
        assert_eq!(exec.value(s_c).unwrap().data(), &[0.5, 0.5]);
        for (y, x) in exec.value(y_c).unwrap().data().iter().zip(input.data()) {
            assert_eq!(*y, 0.5 * x);
        }

        // W_fc = identity: squeeze = (4, 0) -> (sigma(4), sigma(0)).
        let w = g.param_index("att.chan.weight").unwrap();
        g.params_mut()[w].values.copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let exec = g.forward(&input, Mode::Eval).unwrap();
        let s = exec.value(s_c).unwrap();
        assert!((s.data()[0] - 0.982_013_8).abs() < 1e-4);
        assert_eq!(s.data()[1], 0.5);
    }

    #[test]
    fn channel_attention_is_invariant_to_spatial_permutation() {
        let mut g = NetworkGraph::new(3, 2, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x0 = g.input_node();
        let (s_c, _) = channel_attention(&mut g, x0, 3, &mut rng, "att").unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f32> = (0..3 * 8).map(|_| r.gen_range(-1.0..1.0)).collect();
        let input = Tensor::from_vec(1, 3, 2, 4, data.clone()).unwrap();
        // Reverse each channel plane (a spatial permutation).
        let permuted: Vec<f32> = data
            .chunks(8)
            .flat_map(|plane| plane.iter().rev().copied().collect::<Vec<_>>())
            .collect();
        let input_p = Tensor::from_vec(1, 3, 2, 4, permuted).unwrap();
        let a = g.forward(&input, Mode::Eval).unwrap();
        let b = g.forward(&input_p, Mode::Eval).unwrap();
        assert_eq!(a.value(s_c).unwrap().data(), b.value(s_c).unwrap().data());
    }

    #[test]
    fn parallel_maxout_dominates_both_branches() {
        let mut g = NetworkGraph::new(3, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x0 = g.input_node();
        let (_, y_c) = channel_attention(&mut g, x0, 3, &mut rng, "att").unwrap();
        let (_, y_f) = frequency_attention(&mut g, x0, &mut rng, "att").unwrap();
        let y = g.elementwise_max(y_c, y_f, "att.maxout").unwrap();
        let mut r = ChaCha8Rng::seed_from_u64(9);
        let data = (0..3 * 16).map(|_| r.gen_range(-2.0..2.0)).collect();
        let input = Tensor::from_vec(1, 3, 4, 4, data).unwrap();
        let exec = g.forward(&input, Mode::Eval).unwrap();
        let yv = exec.value(y).unwrap();
        for (o, (c, f)) in yv.data().iter().zip(
            exec.value(y_c)
                .unwrap()
                .data()
                .iter()
                .zip(exec.value(y_f).unwrap().data()),
        ) {
            assert!(*o >= *c && *o >= *f);
            assert!(*o == *c || *o == *f);
        }

        // Equal branches collapse to either one: zero both attention layers
        // so S_c = S_f = 0.5 and Y_c = Y_f.
        zero_param(&mut g, "att.chan.weight");
        zero_param(&mut g, "att.freq.weight");
        zero_param(&mut g, "att.freq.bias");
        let exec = g.forward(&input, Mode::Eval).unwrap();
        assert_eq!(
            exec.value(y).unwrap().data(),
            exec.value(y_c).unwrap().data()
        );
    }

    fn toy_cfg() -> ModelConfig {
        ModelConfig {
            kind: ModelKind::Acnn,
            s: 1,
            n_coils: 2,
            encoder_widths: vec![8, 16],
            bottleneck_width: 32,
            final_hidden_width: 4,
            attention: AttentionSetting::Both(AttentionMode::Parallel),
            input_size: 16,
        }
    }

    #[test]
    fn config_validation_catches_bad_divisibility_and_misuse() {
        let mut cfg = toy_cfg();
        cfg.input_size = 63;
        assert!(cfg.validate().is_err());

        let mut cfg = toy_cfg();
        cfg.kind = ModelKind::KspaceUnet;
        assert!(cfg.validate().is_err()); // attention on non-acnn kind

        let mut cfg = toy_cfg();
        cfg.kind = ModelKind::ImageUnet;
        cfg.attention = AttentionSetting::None;
        assert!(cfg.validate().is_err()); // image baseline needs s = 0
        cfg.s = 0;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn first_and_last_layer_sizes_carry_the_parameter_slopes() {
        let cfg = ModelConfig::full(ModelKind::Acnn, 1, 8, 256);
        let model = build_model(&cfg, 3).unwrap();
        let first = &model.graph.params()[model.graph.param_index("enc0.conv0.weight").unwrap()];
        // 2(2s+1)n input channels x 64 filters x 9 taps
        assert_eq!(first.len(), 2 * 3 * 8 * 64 * 9);
        assert_eq!(first.len(), 1152 * 3 * 8);
        let out = &model.graph.params()[model.graph.param_index("out.weight").unwrap()];
        assert_eq!(out.len(), 32 * 2 * 8);
        assert_eq!(out.len(), 64 * 8);
        assert!(model.graph.param_index("out.bias").is_none());
    }

    #[test]
    fn attention_parameter_delta_matches_insertion_point_sum() {
        let with = build_model(&ModelConfig::full(ModelKind::Acnn, 1, 8, 256), 0).unwrap();
        let without = build_model(
            &ModelConfig {
                attention: AttentionSetting::None,
                ..ModelConfig::full(ModelKind::Acnn, 1, 8, 256)
            },
            0,
        )
        .unwrap();
        let delta = count_params(&with.graph) - count_params(&without.graph);
        let expected: usize = [64usize, 128, 256, 512, 1024, 512, 256, 128]
            .iter()
            .map(|c| c * c + c + 1)
            .sum();
        assert_eq!(delta, expected);
        assert_eq!(expected, 1_743_688);
    }

    #[test]
    fn all_three_block_variants_share_shapes() {
        for mode in [
            AttentionMode::Parallel,
            AttentionMode::ChannelThenFrequency,
            AttentionMode::FrequencyThenChannel,
        ] {
            let cfg = ModelConfig {
                attention: AttentionSetting::Both(mode),
                ..toy_cfg()
            };
            let model = build_model(&cfg, 1).unwrap();
            let dims = model.graph.node_dims(model.graph.output_node().unwrap());
            assert_eq!(dims.chw(), Some([4, 16, 16]));
        }
    }
}
