use rand::Rng;

use super::{Layer, Op};
use crate::nn::{BatchNorm, Conv2d, DepthwiseConv2d, Padding};

const BN_MOMENTUM: f32 = 0.999;
const BN_EPSILON: f32 = 1e-3;

/// Inverted-residual settings `(expansion, out channels, repeats, first stride)`.
const BLOCKS: [(usize, usize, usize, usize); 7] = [
    (1, 16, 1, 1),
    (6, 24, 2, 2),
    (6, 32, 3, 2),
    (6, 64, 4, 2),
    (6, 96, 3, 1),
    (6, 160, 3, 2),
    (6, 320, 1, 1),
];

pub(super) const FEATURE_DIM: usize = 1280;

struct Builder<'r, R> {
    layers: Vec<Layer>,
    rng: &'r mut R,
}

impl<R: Rng> Builder<'_, R> {
    fn push(&mut self, name: &str, op: Op) -> usize {
        self.layers.push(Layer {
            name: name.to_string(),
            op,
        });
        self.layers.len() - 1
    }

    fn conv(&mut self, name: &str, k: usize, cin: usize, cout: usize, stride: usize) {
        let conv = Conv2d::new(name, k, cin, cout, stride, Padding::Same, false, self.rng);
        self.push(name, Op::Conv(conv));
    }

    fn bn(&mut self, name: &str, channels: usize) {
        self.push(name, Op::BatchNorm(BatchNorm::new(name, channels, BN_MOMENTUM, BN_EPSILON)));
    }

    fn depthwise(&mut self, name: &str, channels: usize, stride: usize) {
        let padding = if stride == 1 { Padding::Same } else { Padding::Valid };
        let dw = DepthwiseConv2d::new(name, 3, channels, stride, padding, self.rng);
        self.push(name, Op::Depthwise(dw));
    }

    /// One inverted residual block; `prefix` is `expanded_conv` for the first
    /// block and `block_{n}` afterwards.
    fn block(&mut self, prefix: &str, cin: usize, cout: usize, expansion: usize, stride: usize) {
        let block_input = self.layers.len() - 1;
        let mut channels = cin;
        if expansion != 1 {
            channels = cin * expansion;
            self.conv(&format!("{prefix}_expand"), 1, cin, channels, 1);
            self.bn(&format!("{prefix}_expand_BN"), channels);
            self.push(&format!("{prefix}_expand_relu"), Op::Relu6);
        }
        if stride == 2 {
            self.push(&format!("{prefix}_pad"), Op::CorrectPad);
        }
        self.depthwise(&format!("{prefix}_depthwise"), channels, stride);
        self.bn(&format!("{prefix}_depthwise_BN"), channels);
        self.push(&format!("{prefix}_depthwise_relu"), Op::Relu6);
        self.conv(&format!("{prefix}_project"), 1, channels, cout, 1);
        self.bn(&format!("{prefix}_project_BN"), cout);
        if stride == 1 && cin == cout {
            self.push(&format!("{prefix}_add"), Op::Add(block_input));
        }
    }
}

/// The full layer list, named as in the reference Keras definition, without
/// the classifier top. Weights are freshly initialized.
pub(super) fn layers<R: Rng>(rng: &mut R) -> Vec<Layer> {
    let mut b = Builder {
        layers: Vec::with_capacity(154),
        rng,
    };
    b.push("input", Op::Input { rescale: true });
    b.conv("Conv1", 3, 3, 32, 2);
    b.bn("bn_Conv1", 32);
    b.push("Conv1_relu", Op::Relu6);
    let mut cin = 32;
    let mut index = 0;
    for (t, c, n, s) in BLOCKS {
        for r in 0..n {
            let stride = if r == 0 { s } else { 1 };
            let prefix = if index == 0 {
                "expanded_conv".to_string()
            } else {
                format!("block_{index}")
            };
            b.block(&prefix, cin, c, t, stride);
            cin = c;
            index += 1;
        }
    }
    b.conv("Conv_1", 1, cin, FEATURE_DIM, 1);
    b.bn("Conv_1_bn", FEATURE_DIM);
    b.push("out_relu", Op::Relu6);
    b.layers
}
