//! Parameter counts against a closed-form tally of the reference layouts.

use candle_core::DType;
use lookout::nets::{Architecture, ClassificationMode, ExplorerModel, UpperBoundModel};

fn conv(i: usize, o: usize, k: usize) -> usize {
    o * i * k * k + o
}

fn double_conv(i: usize, o: usize) -> usize {
    conv(i, o, 3) + conv(o, o, 3)
}

fn dense(i: usize, o: usize) -> usize {
    i * o + o
}

fn local(a: &Architecture) -> usize {
    let mut n = 0;
    let mut inputs = 5;
    for &c in &a.local_stages {
        n += double_conv(inputs, c);
        inputs = c;
    }
    n += double_conv(inputs, a.local_bottleneck);
    let mut below = a.local_bottleneck;
    for &c in a.local_stages.iter().rev() {
        n += conv(below, c, 2) + double_conv(2 * c, c);
        below = c;
    }
    n + conv(below, 3, 1)
}

fn upsampler(a: &Architecture) -> usize {
    let c = a.upsampler_channels;
    let mut n = double_conv(3 + 4, c[0]) + conv(c[0], 3, 1);
    for k in 1..4 {
        n += conv(c[k - 1], c[k], 2) + double_conv(c[k] + 4, c[k]) + conv(c[k], 3, 1);
    }
    n
}

fn vgg(a: &Architecture, classes: usize) -> usize {
    let mut n = 0;
    let mut inputs = 3;
    for (&c, &k) in a.vgg_channels.iter().zip(&a.vgg_convs) {
        for _ in 0..k {
            n += conv(inputs, c, 3);
            inputs = c;
        }
    }
    let g = a.geometry();
    let shrink = 1 << a.vgg_channels.len();
    let flat = inputs * (g.height() / shrink) * (g.width() / shrink);
    n + dense(flat, a.vgg_hidden) + dense(a.vgg_hidden, a.vgg_hidden) + dense(a.vgg_hidden, classes)
}

fn explorer(a: &Architecture) -> usize {
    let (h, w) = a.background_dims();
    local(a)
        + conv(a.local_bottleneck, a.descriptor_channels, 1)
        + dense(a.vector_len(), a.background_hidden)
        + dense(a.background_hidden, 3 * h * w)
        + upsampler(a)
        + dense(a.vector_len(), a.attention_hidden)
        + dense(a.attention_hidden, 128)
}

#[test]
fn micro_counts_match_tally() {
    let a = Architecture::micro();
    let off = ExplorerModel::new(a.clone(), ClassificationMode::Off, 26, DType::F32, 0).unwrap();
    assert_eq!(off.store.parameter_count(), explorer(&a));
    assert_eq!(off.store.parameter_count(), 164_403);
    assert_eq!(off.store.block_parameter_count("local"), local(&a));
    assert_eq!(off.store.block_parameter_count("upsampler"), upsampler(&a));

    let recon = ExplorerModel::new(a.clone(), ClassificationMode::FromRecon, 26, DType::F32, 0).unwrap();
    assert_eq!(recon.store.parameter_count(), explorer(&a) + vgg(&a, 26));

    let vector = ExplorerModel::new(a.clone(), ClassificationMode::FromVector, 26, DType::F32, 0).unwrap();
    let class_path = conv(a.local_bottleneck, a.descriptor_channels, 1)
        + dense(a.vector_len(), a.classifier_hidden)
        + dense(a.classifier_hidden, 26);
    assert_eq!(vector.store.parameter_count(), explorer(&a) + class_path);

    let ub = UpperBoundModel::new(a.clone(), 26, DType::F32, 0).unwrap();
    assert_eq!(ub.store.parameter_count(), vgg(&a, 26));
}

#[test]
fn full_counts_match_tally() {
    let a = Architecture::full();
    let off = ExplorerModel::new(a.clone(), ClassificationMode::Off, 26, DType::F32, 0).unwrap();
    assert_eq!(off.store.parameter_count(), explorer(&a));
}

#[test]
fn same_seed_same_initialization() {
    let a = Architecture::micro();
    let m1 = ExplorerModel::new(a.clone(), ClassificationMode::Off, 26, DType::F32, 11).unwrap();
    let m2 = ExplorerModel::new(a.clone(), ClassificationMode::Off, 26, DType::F32, 11).unwrap();
    let m3 = ExplorerModel::new(a, ClassificationMode::Off, 26, DType::F32, 12).unwrap();
    assert_eq!(m1.store.flat_values().unwrap(), m2.store.flat_values().unwrap());
    assert_ne!(m1.store.flat_values().unwrap(), m3.store.flat_values().unwrap());
}
