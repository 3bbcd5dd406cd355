//! Backbone serialization: a versioned plain-text architecture descriptor
//! plus a single tensor file holding every kernel and bias in layer order.

use std::fs;
use std::path::Path;

use super::{BackboneParams, ChannelStack, ConvLayer, GradientMap, Layer};
use crate::error::{Error, Result};
use crate::grid::{read_tensor, write_tensor};

const ARCH_HEADER: &str = "fgparts-backbone v1";

/// Writes `arch_path` (text descriptor) and `weights_path` (tensor file).
pub fn save_backbone(
    params: &BackboneParams,
    arch_path: impl AsRef<Path>,
    weights_path: impl AsRef<Path>,
) -> Result<()> {
    let mut arch = String::new();
    arch.push_str(ARCH_HEADER);
    arch.push('\n');
    arch.push_str(&format!("input_channels {}\n", params.input_channels));
    arch.push_str(&format!(
        "input_size {} {}\n",
        params.input_size.0, params.input_size.1
    ));
    arch.push_str(&format!("seed {}\n", params.rng_seed));
    let mut weights = Vec::new();
    for layer in &params.layers {
        match layer {
            Layer::Conv(conv) => {
                arch.push_str(&format!(
                    "layer conv {} {} {}\n",
                    conv.in_channels,
                    conv.out_channels,
                    if conv.relu { "relu" } else { "linear" }
                ));
                weights.extend_from_slice(&conv.kernel);
                weights.extend_from_slice(&conv.bias);
            }
            Layer::MaxPool2 => arch.push_str("layer pool2\n"),
        }
    }
    let arch_path = arch_path.as_ref();
    fs::write(arch_path, arch).map_err(|e| Error::io(arch_path, e))?;
    write_tensor(weights_path, &[weights.len()], &weights)
}

/// Restores a backbone written by [`save_backbone`].
pub fn load_backbone(
    arch_path: impl AsRef<Path>,
    weights_path: impl AsRef<Path>,
) -> Result<BackboneParams> {
    let arch_path = arch_path.as_ref();
    let text = fs::read_to_string(arch_path).map_err(|e| Error::io(arch_path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(ARCH_HEADER) {
        return Err(Error::format(format!(
            "{}: header: expected {ARCH_HEADER:?}",
            arch_path.display()
        )));
    }

    let mut input_channels = None;
    let mut input_size = None;
    let mut seed = 0u64;
    let mut layer_descs: Vec<(usize, usize, bool)> = Vec::new();
    let mut pools: Vec<usize> = Vec::new(); // positions of pool layers
    let mut position = 0usize;
    for line in lines {
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            [] => {}
            ["input_channels", c] => input_channels = Some(parse_field(c, "input_channels")?),
            ["input_size", h, w] => {
                input_size = Some((parse_field(h, "input_size")?, parse_field(w, "input_size")?))
            }
            ["seed", s] => {
                seed = s
                    .parse()
                    .map_err(|_| Error::format("seed: not an integer"))?
            }
            ["layer", "conv", i, o, act] => {
                let relu = match *act {
                    "relu" => true,
                    "linear" => false,
                    other => return Err(Error::format(format!("layer: unknown activation {other:?}"))),
                };
                layer_descs.push((parse_field(i, "layer conv")?, parse_field(o, "layer conv")?, relu));
                position += 1;
            }
            ["layer", "pool2"] => {
                pools.push(position);
                position += 1;
            }
            other => return Err(Error::format(format!("unknown descriptor line {other:?}"))),
        }
    }
    let input_channels =
        input_channels.ok_or_else(|| Error::format("input_channels: missing"))?;
    let input_size = input_size.ok_or_else(|| Error::format("input_size: missing"))?;

    let (dims, data) = read_tensor(weights_path)?;
    let expected: usize = layer_descs
        .iter()
        .map(|(i, o, _)| i * o * 9 + o)
        .sum();
    if dims != vec![expected] {
        return Err(Error::format(format!(
            "weights: expected dims [{expected}], got {dims:?}"
        )));
    }

    // Reassemble layers in the recorded order.
    let mut layers = Vec::new();
    let mut offset = 0usize;
    let mut conv_iter = layer_descs.iter();
    let mut feature_dim = 0;
    let total_layers = layer_descs.len() + pools.len();
    for pos in 0..total_layers {
        if pools.contains(&pos) {
            layers.push(Layer::MaxPool2);
        } else {
            let &(in_c, out_c, relu) = conv_iter
                .next()
                .ok_or_else(|| Error::format("layer order inconsistent"))?;
            let ksize = in_c * out_c * 9;
            let kernel = data[offset..offset + ksize].to_vec();
            offset += ksize;
            let bias = data[offset..offset + out_c].to_vec();
            offset += out_c;
            feature_dim = out_c;
            layers.push(Layer::Conv(ConvLayer {
                in_channels: in_c,
                out_channels: out_c,
                kernel,
                bias,
                relu,
            }));
        }
    }
    if !matches!(layers.last(), Some(Layer::Conv(_))) {
        return Err(Error::format("descriptor: last layer must be a convolution"));
    }
    Ok(BackboneParams {
        layers,
        input_channels,
        input_size,
        feature_dim,
        rng_seed: seed,
    })
}

fn parse_field(tok: &str, field: &str) -> Result<usize> {
    tok.parse()
        .map_err(|_| Error::format(format!("{field}: not a number ({tok:?})")))
}

/// Loads an externally computed channel stack (`[D, s, u]`) and per-channel
/// gradient maps (`[D, H, W, C]`), validating against the declared feature
/// dimension and image shape.
pub fn load_precomputed(
    stack_path: impl AsRef<Path>,
    grads_path: impl AsRef<Path>,
    feature_dim: usize,
    image_shape: (usize, usize, usize),
) -> Result<(ChannelStack, Vec<GradientMap>)> {
    let (sdims, sdata) = read_tensor(stack_path)?;
    if sdims.len() != 3 {
        return Err(Error::format(format!(
            "stack: expected rank 3 [D, s, u], got rank {}",
            sdims.len()
        )));
    }
    if sdims[0] != feature_dim {
        return Err(Error::format(format!(
            "stack: expected D = {feature_dim}, got {}",
            sdims[0]
        )));
    }
    let stack = ChannelStack::new(sdims[0], sdims[1], sdims[2], sdata)?;

    let (gdims, gdata) = read_tensor(grads_path)?;
    let (h, w, c) = image_shape;
    if gdims.len() != 4 {
        return Err(Error::format(format!(
            "grads: expected rank 4 [D, H, W, C], got rank {}",
            gdims.len()
        )));
    }
    if gdims != vec![feature_dim, h, w, c] {
        return Err(Error::format(format!(
            "grads: expected dims [{feature_dim}, {h}, {w}, {c}], got {gdims:?}"
        )));
    }
    let per = h * w * c;
    let grads = (0..feature_dim)
        .map(|d| GradientMap::new(h, w, c, gdata[d * per..(d + 1) * per].to_vec()))
        .collect::<Result<Vec<_>>>()?;
    Ok((stack, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{forward, input_gradient};
    use crate::grid::Image;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("fgparts-backbone-io");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn save_load_roundtrip_preserves_params() {
        let p = BackboneParams::default_architecture(3, 8, (16, 16), 21).unwrap();
        let arch = tmp("a.arch");
        let weights = tmp("a.tensor");
        save_backbone(&p, &arch, &weights).unwrap();
        let q = load_backbone(&arch, &weights).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn loaded_backbone_reproduces_outputs() {
        let p = BackboneParams::default_architecture(1, 4, (8, 8), 5).unwrap();
        let arch = tmp("b.arch");
        let weights = tmp("b.tensor");
        save_backbone(&p, &arch, &weights).unwrap();
        let q = load_backbone(&arch, &weights).unwrap();

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data: Vec<f32> = (0..64).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let img = Image::new(8, 8, 1, data).unwrap();
        assert_eq!(
            forward(&img, &p).unwrap().1.data(),
            forward(&img, &q).unwrap().1.data()
        );
        assert_eq!(
            input_gradient(&img, &p, 1).unwrap().data(),
            input_gradient(&img, &q, 1).unwrap().data()
        );
    }

    #[test]
    fn precomputed_roundtrip_and_validation() {
        let stack_path = tmp("s.tensor");
        let grads_path = tmp("g.tensor");
        let d = 2usize;
        let (h, w, c) = (3usize, 4usize, 1usize);
        let stack_data: Vec<f32> = (0..d * 2 * 2).map(|i| i as f32).collect();
        let grad_data: Vec<f32> = (0..d * h * w * c).map(|i| i as f32 * 0.5).collect();
        write_tensor(&stack_path, &[d, 2, 2], &stack_data).unwrap();
        write_tensor(&grads_path, &[d, h, w, c], &grad_data).unwrap();

        let (stack, grads) = load_precomputed(&stack_path, &grads_path, d, (h, w, c)).unwrap();
        assert_eq!(stack.data(), stack_data.as_slice());
        assert_eq!(grads.len(), d);
        assert_eq!(grads[1].value(0, 0, 0), (h * w * c) as f32 * 0.5);

        // Declared D mismatch.
        assert!(load_precomputed(&stack_path, &grads_path, 3, (h, w, c)).is_err());
        // Image shape mismatch.
        assert!(load_precomputed(&stack_path, &grads_path, d, (h, w, 3)).is_err());
    }
}
