use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{conv_backward, conv_forward, pool_backward, pool_forward, ConvOutput, ConvParams, Maps};
use super::spec::{uniform_range, NetworkSpec};
use super::CnnError;
use crate::grid::ImageGrid;

/// Fully connected sigmoid output layer; weights are class-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub inputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl DenseParams {
    pub fn zeros(inputs: usize, classes: usize) -> Self {
        Self {
            inputs,
            weights: vec![0.0; inputs * classes],
            biases: vec![0.0; classes],
        }
    }
}

/// Every trainable parameter of a network. Also used for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub convs: Vec<ConvParams>,
    pub output: DenseParams,
}

pub type Gradients = ParamSet;

impl ParamSet {
    pub fn zeros(spec: &NetworkSpec) -> Result<Self, CnnError> {
        let features = spec.feature_len()?;
        Ok(Self {
            convs: spec.stages.iter().map(|s| ConvParams::zeros(&s.conv)).collect(),
            output: DenseParams::zeros(features, spec.classes),
        })
    }

    /// Parameter slices in storage order: per layer kernels then biases,
    /// then output weights and biases.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::with_capacity(2 * self.convs.len() + 2);
        for c in &self.convs {
            v.push(&c.kernels);
            v.push(&c.biases);
        }
        v.push(&self.output.weights);
        v.push(&self.output.biases);
        v
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::with_capacity(2 * self.convs.len() + 2);
        for c in &mut self.convs {
            v.push(&mut c.kernels);
            v.push(&mut c.biases);
        }
        v.push(&mut self.output.weights);
        v.push(&mut self.output.biases);
        v
    }

    pub fn len(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.slices().concat()
    }

    /// Mutable access by flat index (storage order).
    pub fn get_mut(&mut self, mut idx: usize) -> &mut f64 {
        for s in self.slices_mut() {
            if idx < s.len() {
                return &mut s[idx];
            }
            idx -= s.len();
        }
        panic!("parameter index out of range");
    }

    /// `self += scale * other`
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub params: ParamSet,
    pub seed: u64,
}

/// Zero biases; weights uniform on `[-r, r]`, `r = sqrt(6 / (f_in + f_out))`.
/// The output layer uses `f_in` = flattened features, `f_out` = classes.
pub fn init_network(spec: &NetworkSpec, seed: u64) -> Result<NetworkState, CnnError> {
    let mut params = ParamSet::zeros(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (stage, conv) in spec.stages.iter().zip(params.convs.iter_mut()) {
        let r = stage.conv.init_range();
        for w in conv.kernels.iter_mut() {
            *w = rng.gen_range(-r..=r);
        }
    }
    let r = uniform_range(params.output.inputs as f64, spec.classes as f64);
    for w in params.output.weights.iter_mut() {
        *w = rng.gen_range(-r..=r);
    }
    Ok(NetworkState { params, seed })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageCache {
    pub conv: ConvOutput,
    pub pooled: Maps,
}

/// Every intermediate map of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    pub input: Maps,
    pub stages: Vec<StageCache>,
    pub output_pre: Vec<f64>,
    pub scores: Vec<f64>,
}

impl ForwardCache {
    /// Flattened output-layer input (map-major, then row-major).
    pub fn features(&self) -> &[f64] {
        match self.stages.last() {
            Some(s) => &s.pooled.data,
            None => &self.input.data,
        }
    }
}

fn check_input(input: &ImageGrid, spec: &NetworkSpec) -> Result<(), CnnError> {
    let expected = (spec.input_side, spec.input_side, spec.input_channels);
    if input.shape() != expected {
        return Err(CnnError::ShapeMismatch {
            expected: format!("{}x{}x{}", expected.0, expected.1, expected.2),
            got: format!("{}x{}x{}", input.height(), input.width(), input.channels()),
        });
    }
    Ok(())
}

pub fn forward(
    input: &ImageGrid,
    spec: &NetworkSpec,
    state: &NetworkState,
) -> Result<(Vec<f64>, ForwardCache), CnnError> {
    check_input(input, spec)?;
    let act = &spec.activation;
    let maps = Maps::from_grid(input)?;
    let mut stages = Vec::with_capacity(spec.stages.len());
    for (st, params) in spec.stages.iter().zip(&state.params.convs) {
        let src = stages.last().map_or(&maps, |s: &StageCache| &s.pooled);
        let conv = conv_forward(src, &st.conv, params, act);
        let pooled = pool_forward(&conv.post, &st.pool)?;
        stages.push(StageCache { conv, pooled });
    }
    let mut cache = ForwardCache {
        input: maps,
        stages,
        output_pre: Vec::new(),
        scores: Vec::new(),
    };
    let out = &state.params.output;
    let feats = cache.features();
    if feats.len() != out.inputs {
        return Err(CnnError::ShapeMismatch {
            expected: format!("{} output-layer inputs", out.inputs),
            got: format!("{}", feats.len()),
        });
    }
    let output_pre: Vec<f64> = out
        .weights
        .chunks_exact(out.inputs)
        .zip(&out.biases)
        .map(|(row, b)| b + row.iter().zip(feats).map(|(w, f)| w * f).sum::<f64>())
        .collect();
    let scores: Vec<f64> = output_pre.iter().map(|&z| act.apply(z)).collect();
    cache.output_pre = output_pre;
    cache.scores = scores.clone();
    Ok((scores, cache))
}

/// `0.5 * sum_k (t_k - y_k)^2` against a one-hot target.
pub fn loss(scores: &[f64], target: usize) -> f64 {
    assert!(target < scores.len(), "target class out of range");
    0.5 * scores
        .iter()
        .enumerate()
        .map(|(k, &y)| {
            let t = if k == target { 1.0 } else { 0.0 };
            (t - y) * (t - y)
        })
        .sum::<f64>()
}

/// Analytic gradients of [`loss`] for one sample.
pub fn backward(
    cache: &ForwardCache,
    target: usize,
    spec: &NetworkSpec,
    state: &NetworkState,
) -> Result<Gradients, CnnError> {
    let act = &spec.activation;
    let mut grads = ParamSet::zeros(spec)?;
    let out = &state.params.output;
    let feats = cache.features();

    let delta: Vec<f64> = cache
        .scores
        .iter()
        .enumerate()
        .map(|(k, &y)| {
            let t = if k == target { 1.0 } else { 0.0 };
            (y - t) * act.derivative_from_output(y)
        })
        .collect();
    let mut grad_feats = vec![0.0; out.inputs];
    for (k, &d) in delta.iter().enumerate() {
        grads.output.biases[k] = d;
        let row = &out.weights[k * out.inputs..(k + 1) * out.inputs];
        let grow = &mut grads.output.weights[k * out.inputs..(k + 1) * out.inputs];
        for f in 0..out.inputs {
            grow[f] = d * feats[f];
            grad_feats[f] += d * row[f];
        }
    }

    let mut upstream = match cache.stages.last() {
        Some(s) => Maps {
            count: s.pooled.count,
            side: s.pooled.side,
            data: grad_feats,
        },
        None => return Ok(grads),
    };
    for l in (0..spec.stages.len()).rev() {
        let st = &spec.stages[l];
        let sc = &cache.stages[l];
        let mut grad_pre = pool_backward(&upstream, &st.pool);
        for (g, &f) in grad_pre.data.iter_mut().zip(&sc.conv.post.data) {
            *g *= act.derivative_from_output(f);
        }
        let input = if l == 0 { &cache.input } else { &cache.stages[l - 1].pooled };
        let gin = conv_backward(
            input,
            &grad_pre,
            &st.conv,
            &state.params.convs[l],
            &mut grads.convs[l],
            l > 0,
        );
        if let Some(g) = gin {
            upstream = g;
        }
    }
    Ok(grads)
}

/// Argmax class (ties to the smallest index) and the raw scores.
pub fn predict(
    input: &ImageGrid,
    spec: &NetworkSpec,
    state: &NetworkState,
) -> Result<(usize, Vec<f64>), CnnError> {
    let (scores, _) = forward(input, spec, state)?;
    Ok((argmax(&scores), scores))
}

pub fn argmax(scores: &[f64]) -> usize {
    let mut best = 0;
    for (k, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cnn::spec::ActivationSpec;

    fn toy_spec() -> NetworkSpec {
        NetworkSpec::from_stages(10, 2, &[(3, 3, 2), (2, 2, 1)], 3, ActivationSpec::default())
    }

    fn toy_input() -> ImageGrid {
        ImageGrid::from_fn(10, 10, 2, |y, x, c| ((y * 3 + x * 5 + c * 7) % 11) as f64 / 11.0 - 0.5)
    }

    #[test]
    fn init_biases_zero_and_weights_in_range() {
        let spec = NetworkSpec::from_stages(32, 3, &[(6, 5, 2)], 4, ActivationSpec::default());
        let state = init_network(&spec, 7).unwrap();
        let r = spec.stages[0].conv.init_range();
        assert!(state.params.convs[0].kernels.iter().all(|w| w.abs() <= r));
        assert!(state.params.convs[0].biases.iter().all(|&b| b == 0.0));
        assert!(state.params.output.biases.iter().all(|&b| b == 0.0));
        let ro = (6.0 / (14.0 * 14.0 * 6.0 + 4.0f64)).sqrt();
        assert!(state.params.output.weights.iter().all(|w| w.abs() <= ro));
        assert_eq!(state, init_network(&spec, 7).unwrap());
        assert_ne!(state, init_network(&spec, 8).unwrap());
    }

    #[test]
    fn zero_network_scores_half_and_predicts_class_zero() {
        let spec = toy_spec();
        let state = NetworkState {
            params: ParamSet::zeros(&spec).unwrap(),
            seed: 0,
        };
        let (class, scores) = predict(&toy_input(), &spec, &state).unwrap();
        assert_eq!(scores, vec![0.5; 3]);
        assert_eq!(class, 0);
    }

    #[test]
    fn forward_is_deterministic_and_bounded() {
        let spec = toy_spec();
        let state = init_network(&spec, 1).unwrap();
        let (a, _) = forward(&toy_input(), &spec, &state).unwrap();
        let (b, _) = forward(&toy_input(), &spec, &state).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 3);
        assert!(a.iter().all(|&s| s > 0.0 && s < 1.0));
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let spec = toy_spec();
        let state = init_network(&spec, 1).unwrap();
        let bad = ImageGrid::zeros(10, 10, 3);
        assert!(matches!(forward(&bad, &spec, &state), Err(CnnError::ShapeMismatch { .. })));
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss(&[0.0, 1.0, 0.0], 1), 0.0);
        assert_eq!(loss(&[0.5, 0.5], 0), 0.25);
    }

    #[test]
    fn gradients_match_parameter_shapes() {
        let spec = toy_spec();
        let state = init_network(&spec, 3).unwrap();
        let (_, cache) = forward(&toy_input(), &spec, &state).unwrap();
        let g = backward(&cache, 1, &spec, &state).unwrap();
        let a: Vec<usize> = g.slices().iter().map(|s| s.len()).collect();
        let b: Vec<usize> = state.params.slices().iter().map(|s| s.len()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn saturated_perfect_prediction_has_near_zero_gradient() {
        let spec = NetworkSpec::from_stages(4, 1, &[(1, 1, 1)], 2, ActivationSpec::default());
        let mut state = init_network(&spec, 0).unwrap();
        state.params.output.weights.iter_mut().for_each(|w| *w = 0.0);
        state.params.output.biases = vec![40.0, -40.0];
        let input = ImageGrid::filled(4, 4, 1, 0.3);
        let (_, cache) = forward(&input, &spec, &state).unwrap();
        let g = backward(&cache, 0, &spec, &state).unwrap();
        assert!(g.flatten().iter().all(|v| v.abs() < 1e-15));
    }

    #[test]
    fn central_differences_agree() {
        let spec = toy_spec();
        let state = init_network(&spec, 11).unwrap();
        let input = toy_input();
        let target = 2;
        let (_, cache) = forward(&input, &spec, &state).unwrap();
        let analytic = backward(&cache, target, &spec, &state).unwrap().flatten();
        let h = 1e-4;
        for idx in 0..analytic.len() {
            let mut plus = state.clone();
            *plus.params.get_mut(idx) += h;
            let mut minus = state.clone();
            *minus.params.get_mut(idx) -= h;
            let lp = loss(&forward(&input, &spec, &plus).unwrap().0, target);
            let lm = loss(&forward(&input, &spec, &minus).unwrap().0, target);
            let numeric = (lp - lm) / (2.0 * h);
            let a = analytic[idx];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            assert!(rel < 1e-4, "param {idx}: analytic {a} numeric {numeric}");
        }
    }
}
