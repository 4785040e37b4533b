use std::fmt;
use std::sync::Arc;
use std::time::{Duration, Instant};

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::local::{compute, render};
use super::output::{AtomicOutput, OutputKind};
use super::{AtomicDescriptor, DescriptorError, ParamSpec, SemanticType, ToolError, ToolErrorKind, ToolInput, DEFAULT_THRESHOLD};
use crate::grammar::ArgValue;
use crate::image::{ImageStore, StoredImage};
use crate::world::NoiseConfig;

pub const DEFAULT_ATOMICS: [&str; 6] = ["detect_objects", "segment", "depth_estimate", "reconstruct_3d", "render", "compute"];

/// Everything a backend needs to run one atomic call.
#[derive(Debug, Clone, Copy)]
pub struct AtomicRequest<'a> {
    pub name: &'a str,
    pub input: &'a ToolInput,
    pub image: &'a StoredImage,
    /// Per-call seed derived from the episode seed and call index.
    pub seed: u64,
    /// Remaining wall-clock budget, if bounded.
    pub budget: Option<Duration>,
    /// A fault the backend must report instead of running the call.
    pub inject: Option<ToolErrorKind>,
}

pub trait Backend: Send + Sync + fmt::Debug {
    fn invoke(&self, request: &AtomicRequest<'_>) -> Result<AtomicOutput, ToolError>;
}

pub type Binding = Arc<dyn Backend>;

/// The in-process `compute` and `render` utilities.
#[derive(Debug, Clone, Copy, Default)]
pub struct LocalUtilities;

impl Backend for LocalUtilities {
    fn invoke(&self, request: &AtomicRequest<'_>) -> Result<AtomicOutput, ToolError> {
        if let Some(kind) = request.inject {
            return Err(ToolError::injected(kind));
        }
        let raster = &request.image.raster;
        match request.name {
            "compute" => compute(request.input, raster.width(), raster.height()),
            "render" => render(request.input, raster),
            other => Err(ToolError::new(ToolErrorKind::ExecutionError, format!("unknown operation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RegistryError {
    #[error("atomic `{0}` is already registered")]
    DuplicateName(String),
    #[error("atomic `{0}` is not registered")]
    UnknownAtomic(String),
    #[error("invalid descriptor for `{name}`: {source}")]
    InvalidDescriptor {
        name: String,
        #[source]
        source: DescriptorError,
    },
}

/// Name-to-backend dispatch table. Immutable once handed to an episode.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: IndexMap<String, (AtomicDescriptor, Binding)>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The six default atomics. Perception atomics go to `perception`;
    /// `compute` and `render` always run in process.
    pub fn with_defaults(perception: Binding) -> Self {
        let local: Binding = Arc::new(LocalUtilities);
        let mut reg = Self::new();
        for d in Self::defaults_descriptors() {
            let binding = if matches!(d.name.as_str(), "compute" | "render") { local.clone() } else { perception.clone() };
            reg.register_atomic(d, binding).expect("default descriptors are valid and distinct");
        }
        reg
    }

    pub fn defaults_descriptors() -> Vec<AtomicDescriptor> {
        use SemanticType::*;
        let image = || ParamSpec::required("image", ImageRef);
        vec![
            AtomicDescriptor::new(
                "detect_objects",
                vec![
                    image(),
                    ParamSpec::required("text_labels", TextList),
                    ParamSpec::optional("threshold", Number, ArgValue::Number(DEFAULT_THRESHOLD)),
                ],
                OutputKind::Detections,
            ),
            AtomicDescriptor::new("segment", vec![image()], OutputKind::Mask),
            AtomicDescriptor::new("depth_estimate", vec![image()], OutputKind::DepthField),
            AtomicDescriptor::new("reconstruct_3d", vec![image()], OutputKind::PointCloud3D),
            AtomicDescriptor::new(
                "render",
                vec![image(), ParamSpec::required("style", Text)],
                OutputKind::ComputeResult,
            ),
            AtomicDescriptor::new(
                "compute",
                vec![
                    image(),
                    ParamSpec::required("op", Text),
                    ParamSpec::optional("box", NumberList, ArgValue::NumberList(vec![])),
                    ParamSpec::optional("center", NumberList, ArgValue::NumberList(vec![])),
                    ParamSpec::optional("zoom_factor", Number, ArgValue::Number(1.0)),
                ],
                OutputKind::ComputeResult,
            ),
        ]
    }

    pub fn register_atomic(&mut self, descriptor: AtomicDescriptor, binding: Binding) -> Result<(), RegistryError> {
        if self.entries.contains_key(&descriptor.name) {
            return Err(RegistryError::DuplicateName(descriptor.name));
        }
        descriptor
            .validate()
            .map_err(|source| RegistryError::InvalidDescriptor { name: descriptor.name.clone(), source })?;
        self.entries.insert(descriptor.name.clone(), (descriptor, binding));
        Ok(())
    }

    /// Swaps the backend of an existing atomic (e.g. an alternate detector).
    pub fn rebind(&mut self, name: &str, binding: Binding) -> Result<(), RegistryError> {
        let entry = self.entries.get_mut(name).ok_or_else(|| RegistryError::UnknownAtomic(name.to_string()))?;
        entry.1 = binding;
        Ok(())
    }

    pub fn descriptor(&self, name: &str) -> Option<&AtomicDescriptor> {
        self.entries.get(name).map(|(d, _)| d)
    }

    pub fn binding(&self, name: &str) -> Option<&Binding> {
        self.entries.get(name).map(|(_, b)| b)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// Per-episode execution state: image store, failure injection, budget and
/// the call counter that derives per-call seeds.
#[derive(Debug)]
pub struct ExecContext {
    pub store: ImageStore,
    /// Only `failure_prob` and `failure_kinds` are consulted here.
    pub failures: NoiseConfig,
    /// Wall-clock budget per atomic call; `None` is unbounded.
    pub budget: Option<Duration>,
    seed: u64,
    calls: u64,
    rng: ChaCha8Rng,
    armed: Option<ToolErrorKind>,
}

impl ExecContext {
    pub fn new(store: ImageStore, seed: u64) -> Self {
        Self {
            store,
            failures: NoiseConfig::off(),
            budget: None,
            seed,
            calls: 0,
            rng: ChaCha8Rng::seed_from_u64(seed),
            armed: None,
        }
    }

    pub fn with_failures(mut self, failures: NoiseConfig) -> Self {
        self.failures = failures;
        self
    }

    pub fn with_budget(mut self, budget: Duration) -> Self {
        self.budget = Some(budget);
        self
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn calls_made(&self) -> u64 {
        self.calls
    }

    /// Draws from the failure configuration and arms the result for the next atomic call.
    pub fn draw_failure(&mut self) -> Option<ToolErrorKind> {
        self.armed = self.failures.draw_failure(&mut self.rng);
        self.armed
    }

    pub fn arm(&mut self, kind: Option<ToolErrorKind>) {
        self.armed = kind;
    }

    pub fn disarm(&mut self) {
        self.armed = None;
    }

    fn next_call_seed(&mut self) -> u64 {
        self.calls += 1;
        splitmix64(self.seed ^ self.calls.wrapping_mul(0x9e37_79b9_7f4a_7c15))
    }
}

pub(crate) fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Runs one atomic through its binding.
///
/// Any fault, including an output of the wrong kind or one that breaks the
/// payload invariants, comes back as exactly one [`ToolError`].
pub fn invoke_atomic(registry: &Registry, name: &str, input: &ToolInput, ctx: &mut ExecContext) -> Result<AtomicOutput, ToolError> {
    let exec = |d: String| ToolError::new(ToolErrorKind::ExecutionError, d);
    let (descriptor, binding) = registry
        .entries
        .get(name)
        .ok_or_else(|| exec(format!("unknown operation `{name}`")))?;
    if ctx.budget == Some(Duration::ZERO) {
        ctx.disarm();
        return Err(ToolError::new(ToolErrorKind::Timeout, "no time budget left"));
    }
    descriptor.bind(&input.args).map_err(|e| exec(e.to_string()))?;
    let seed = ctx.next_call_seed();
    let inject = ctx.armed.take();
    let image = ctx.store.resolve(input.image).map_err(|e| exec(e.to_string()))?;
    let request = AtomicRequest { name, input, image, seed, budget: ctx.budget, inject };
    let started = Instant::now();
    let output = binding.invoke(&request)?;
    if let Some(budget) = ctx.budget {
        if started.elapsed() > budget {
            return Err(ToolError::new(ToolErrorKind::Timeout, format!("`{name}` exceeded its {budget:?} budget")));
        }
    }
    if output.kind() != descriptor.output_kind {
        return Err(exec(format!("`{name}` returned {:?}, expected {:?}", output.kind(), descriptor.output_kind)));
    }
    output
        .validate(image.raster.width(), image.raster.height())
        .map_err(|e| exec(format!("`{name}` returned a malformed payload: {e}")))?;
    Ok(output)
}
