use std::fmt;

use super::CnnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub n_in: usize,
    pub n_out: usize,
    /// Square kernel side.
    pub kernel: usize,
}

impl ConvLayerSpec {
    /// Half-width of the uniform initialisation range, `sqrt(6 / (f_in + f_out))`
    /// with `f_in = n_in * K^2` and `f_out = n_out * K^2`.
    pub fn init_range(&self) -> f64 {
        let k2 = (self.kernel * self.kernel) as f64;
        uniform_range(self.n_in as f64 * k2, self.n_out as f64 * k2)
    }

    pub fn weight_count(&self) -> usize {
        self.n_in * self.n_out * self.kernel * self.kernel
    }
}

pub(crate) fn uniform_range(fan_in: f64, fan_out: f64) -> f64 {
    (6.0 / (fan_in + fan_out)).sqrt()
}

/// Non-overlapping n x n mean pooling (fixed weight 1/n^2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolLayerSpec {
    pub n: usize,
}

impl PoolLayerSpec {
    pub fn weight(&self) -> f64 {
        1.0 / (self.n * self.n) as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationSpec {
    pub beta: f64,
}

impl Default for ActivationSpec {
    fn default() -> Self {
        Self { beta: 1.0 }
    }
}

impl ActivationSpec {
    #[inline]
    pub fn apply(&self, x: f64) -> f64 {
        1.0 / (1.0 + (-self.beta * x).exp())
    }

    /// Derivative expressed through the activation value `f`.
    #[inline]
    pub fn derivative_from_output(&self, f: f64) -> f64 {
        self.beta * f * (1.0 - f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    pub conv: ConvLayerSpec,
    pub pool: PoolLayerSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    pub input_side: usize,
    pub input_channels: usize,
    pub stages: Vec<Stage>,
    pub classes: usize,
    pub activation: ActivationSpec,
}

/// Map sides through one stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageShape {
    pub in_side: usize,
    pub conv_side: usize,
    pub out_side: usize,
    pub maps: usize,
}

/// Human-readable record of shape propagation, used in plan errors.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ShapeTrace(pub Vec<String>);

impl fmt::Display for ShapeTrace {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.join(" -> "))
    }
}

impl NetworkSpec {
    /// Builds a spec from per-stage (maps, kernel, pool) triples, chaining `n_in`.
    pub fn from_stages(
        input_side: usize,
        input_channels: usize,
        stages: &[(usize, usize, usize)],
        classes: usize,
        activation: ActivationSpec,
    ) -> Self {
        let mut n_in = input_channels;
        let stages = stages
            .iter()
            .map(|&(maps, kernel, pool)| {
                let s = Stage {
                    conv: ConvLayerSpec {
                        n_in,
                        n_out: maps,
                        kernel,
                    },
                    pool: PoolLayerSpec { n: pool },
                };
                n_in = maps;
                s
            })
            .collect();
        Self {
            input_side,
            input_channels,
            stages,
            classes,
            activation,
        }
    }

    /// Propagates map sides through every stage, rejecting any stage where
    /// the convolution leaves nothing or the pooling does not divide evenly.
    pub fn plan(&self) -> Result<Vec<StageShape>, CnnError> {
        let mut trace = ShapeTrace(vec![format!(
            "input {}x{}x{}",
            self.input_side, self.input_side, self.input_channels
        )]);
        let fail = |stage: usize, reason: String, trace: &ShapeTrace| CnnError::InvalidPlan {
            stage,
            reason,
            trace: trace.to_string(),
        };
        if self.input_side == 0 || self.input_channels == 0 {
            return Err(fail(0, "empty input".into(), &trace));
        }
        if self.classes == 0 {
            return Err(fail(0, "no output classes".into(), &trace));
        }
        if !(self.activation.beta > 0.0) {
            return Err(fail(0, "activation beta must be positive".into(), &trace));
        }
        let mut side = self.input_side;
        let mut maps = self.input_channels;
        let mut shapes = Vec::with_capacity(self.stages.len());
        for (i, st) in self.stages.iter().enumerate() {
            let stage = i + 1;
            let c = st.conv;
            if c.n_in != maps {
                return Err(fail(
                    stage,
                    format!("conv expects {} input maps but receives {maps}", c.n_in),
                    &trace,
                ));
            }
            if c.n_out == 0 {
                return Err(fail(stage, "conv has no output maps".into(), &trace));
            }
            if c.kernel == 0 || c.kernel > side {
                return Err(fail(
                    stage,
                    format!("kernel {} does not fit {side}x{side} maps", c.kernel),
                    &trace,
                ));
            }
            let conv_side = side - c.kernel + 1;
            trace
                .0
                .push(format!("conv{stage} K={} -> {conv_side}x{conv_side}x{}", c.kernel, c.n_out));
            let n = st.pool.n;
            if n == 0 || !conv_side.is_multiple_of(n) {
                return Err(fail(
                    stage,
                    format!("pool n={n} does not divide side {conv_side}"),
                    &trace,
                ));
            }
            let out_side = conv_side / n;
            trace
                .0
                .push(format!("pool{stage} n={n} -> {out_side}x{out_side}x{}", c.n_out));
            shapes.push(StageShape {
                in_side: side,
                conv_side,
                out_side,
                maps: c.n_out,
            });
            side = out_side;
            maps = c.n_out;
        }
        Ok(shapes)
    }

    /// Length of the flattened vector fed to the output layer.
    pub fn feature_len(&self) -> Result<usize, CnnError> {
        let shapes = self.plan()?;
        Ok(match shapes.last() {
            Some(s) => s.out_side * s.out_side * s.maps,
            None => self.input_side * self.input_side * self.input_channels,
        })
    }

    pub fn describe(&self) -> String {
        match self.plan() {
            Ok(_) => {
                let mut parts = vec![format!(
                    "{}x{}x{}",
                    self.input_side, self.input_side, self.input_channels
                )];
                for st in &self.stages {
                    parts.push(format!(
                        "conv({}, K={})+pool({})",
                        st.conv.n_out, st.conv.kernel, st.pool.n
                    ));
                }
                parts.push(format!("dense({})", self.classes));
                parts.join(" -> ")
            }
            Err(e) => e.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_range_arithmetic() {
        let a = ConvLayerSpec {
            n_in: 1,
            n_out: 6,
            kernel: 5,
        };
        assert!((a.init_range() - (6.0f64 / 175.0).sqrt()).abs() < 1e-15);
        assert!((a.init_range() - 0.18516).abs() < 1e-5);
        let b = ConvLayerSpec {
            n_in: 3,
            n_out: 6,
            kernel: 5,
        };
        assert!((b.init_range() - 0.16330).abs() < 1e-5);
    }

    #[test]
    fn plan_propagates_sides() {
        let spec = NetworkSpec::from_stages(61, 3, &[(6, 6, 2), (12, 5, 2)], 3, ActivationSpec::default());
        let shapes = spec.plan().unwrap();
        assert_eq!(shapes[0].conv_side, 56);
        assert_eq!(shapes[0].out_side, 28);
        assert_eq!(shapes[1].conv_side, 24);
        assert_eq!(shapes[1].out_side, 12);
        assert_eq!(spec.feature_len().unwrap(), 12 * 12 * 12);
    }

    #[test]
    fn plan_reports_offending_stage() {
        let spec = NetworkSpec::from_stages(61, 3, &[(6, 5, 2), (12, 5, 2)], 3, ActivationSpec::default());
        match spec.plan() {
            Err(CnnError::InvalidPlan { stage, trace, .. }) => {
                assert_eq!(stage, 1);
                assert!(trace.contains("57x57"), "{trace}");
            }
            other => panic!("expected InvalidPlan, got {other:?}"),
        }
        let too_big = NetworkSpec::from_stages(4, 1, &[(2, 5, 1)], 2, ActivationSpec::default());
        assert!(matches!(too_big.plan(), Err(CnnError::InvalidPlan { stage: 1, .. })));
    }

    #[test]
    fn sigmoid_and_derivative() {
        let act = ActivationSpec { beta: 2.0 };
        assert_eq!(act.apply(0.0), 0.5);
        let f = act.apply(0.3);
        let h = 1e-6;
        let fd = (act.apply(0.3 + h) - act.apply(0.3 - h)) / (2.0 * h);
        assert!((act.derivative_from_output(f) - fd).abs() < 1e-8);
    }
}
