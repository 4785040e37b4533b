//! Atomic operations: descriptors, typed inputs and outputs, backends and
//! the registry that dispatches calls to them.

mod local;
mod output;
mod registry;
mod synthetic;

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::ArgValue;
use crate::image::ImageRef;

pub use local::{
    compute, render, render_raster, CropRequest, RenderError, RenderStyle, COMPUTE_OPS, MASK_ALPHA, OUTLINE_PX,
};
pub use output::{
    decode_png_b64, encode_png_b64, AtomicOutput, BBox, Bitmask, ComputeResult, CropGeometry, DepthField, Detection,
    ObjectMask, ObjectStat, OutputKind, Point3D, RasterPayload,
};
pub use registry::{
    invoke_atomic, AtomicRequest, Backend, Binding, ExecContext, LocalUtilities, Registry, RegistryError,
    DEFAULT_ATOMICS,
};
pub use synthetic::SyntheticBackend;
pub(crate) use registry::splitmix64;

/// Detection score threshold used wherever a caller does not give one.
pub const DEFAULT_THRESHOLD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ToolErrorKind {
    EmptyReturn,
    ExecutionError,
    Timeout,
    BackendUnavailable,
}

impl fmt::Display for ToolErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ToolErrorKind::EmptyReturn => "empty return",
            ToolErrorKind::ExecutionError => "execution error",
            ToolErrorKind::Timeout => "timeout",
            ToolErrorKind::BackendUnavailable => "backend unavailable",
        })
    }
}

/// The single error every backend fault surfaces as.
#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[error("{kind}: {detail}")]
pub struct ToolError {
    pub kind: ToolErrorKind,
    pub detail: String,
}

impl ToolError {
    pub fn new(kind: ToolErrorKind, detail: impl Into<String>) -> Self {
        Self { kind, detail: detail.into() }
    }

    pub fn injected(kind: ToolErrorKind) -> Self {
        Self::new(kind, "injected failure")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SemanticType {
    ImageRef,
    Text,
    TextList,
    Number,
    NumberList,
}

impl SemanticType {
    /// Whether `value` is acceptable for this type. Image references are
    /// written as text (`"image-k"`); an empty list satisfies both list types.
    pub fn accepts(self, value: &ArgValue) -> bool {
        match self {
            SemanticType::ImageRef => value.as_text().is_some_and(|t| t.parse::<ImageRef>().is_ok()),
            SemanticType::Text => value.as_text().is_some(),
            SemanticType::TextList => value.as_text_list().is_some(),
            SemanticType::Number => value.as_number().is_some(),
            SemanticType::NumberList => value.as_number_list().is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub ty: SemanticType,
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<ArgValue>,
}

impl ParamSpec {
    pub fn required(name: &str, ty: SemanticType) -> Self {
        Self { name: name.to_string(), ty, required: true, default: None }
    }

    pub fn optional(name: &str, ty: SemanticType, default: ArgValue) -> Self {
        Self { name: name.to_string(), ty, required: false, default: Some(default) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomicDescriptor {
    pub name: String,
    pub input_schema: Vec<ParamSpec>,
    pub output_kind: OutputKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DescriptorError {
    #[error("parameter `{0}` is required but has a default")]
    RequiredWithDefault(String),
    #[error("parameter `{0}` is optional but has no default")]
    OptionalWithoutDefault(String),
    #[error("default of `{0}` does not match its declared type")]
    DefaultTypeMismatch(String),
    #[error("parameter `{0}` is declared twice")]
    DuplicateParam(String),
}

impl AtomicDescriptor {
    pub fn new(name: &str, input_schema: Vec<ParamSpec>, output_kind: OutputKind) -> Self {
        Self { name: name.to_string(), input_schema, output_kind }
    }

    pub fn validate(&self) -> Result<(), DescriptorError> {
        validate_schema(&self.input_schema)
    }

    pub fn bind(&self, args: &IndexMap<String, ArgValue>) -> Result<ToolInput, BindError> {
        validate_and_bind(self, args)
    }
}

pub(crate) fn validate_schema(schema: &[ParamSpec]) -> Result<(), DescriptorError> {
    let mut seen = std::collections::HashSet::new();
    for p in schema {
        if !seen.insert(p.name.as_str()) {
            return Err(DescriptorError::DuplicateParam(p.name.clone()));
        }
        match (&p.default, p.required) {
            (Some(_), true) => return Err(DescriptorError::RequiredWithDefault(p.name.clone())),
            (None, false) => return Err(DescriptorError::OptionalWithoutDefault(p.name.clone())),
            (Some(d), false) if !p.ty.accepts(d) => return Err(DescriptorError::DefaultTypeMismatch(p.name.clone())),
            _ => {}
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BindError {
    #[error("missing required argument `{0}`")]
    MissingArg(String),
    #[error("argument `{name}` expects {expected:?}, got {found}")]
    TypeMismatch { name: String, expected: SemanticType, found: &'static str },
    #[error("unknown argument `{0}`")]
    UnknownArg(String),
    #[error("no image argument in schema")]
    NoImage,
}

/// Arguments bound against a schema, with defaults filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolInput {
    pub image: ImageRef,
    pub args: IndexMap<String, ArgValue>,
    /// Outputs of upstream atomics this call consumes (e.g. detections for segmentation).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub inputs: Vec<AtomicOutput>,
}

impl ToolInput {
    pub fn with_inputs(mut self, inputs: Vec<AtomicOutput>) -> Self {
        self.inputs = inputs;
        self
    }

    pub fn text(&self, name: &str) -> Option<&str> {
        self.args.get(name).and_then(ArgValue::as_text)
    }

    pub fn number(&self, name: &str) -> Option<f64> {
        self.args.get(name).and_then(ArgValue::as_number)
    }

    pub fn text_list(&self, name: &str) -> Option<&[String]> {
        self.args.get(name).and_then(ArgValue::as_text_list)
    }

    pub fn number_list(&self, name: &str) -> Option<&[f64]> {
        self.args.get(name).and_then(ArgValue::as_number_list)
    }
}

/// Checks `args` against `schema` and fills defaults, keeping schema order.
/// The first `ImageRef` parameter becomes the input image.
pub fn bind_args(schema: &[ParamSpec], args: &IndexMap<String, ArgValue>) -> Result<ToolInput, BindError> {
    if let Some(extra) = args.keys().find(|k| !schema.iter().any(|p| &p.name == *k)) {
        return Err(BindError::UnknownArg(extra.clone()));
    }
    let mut bound = IndexMap::new();
    let mut image = None;
    for p in schema {
        let value = match (args.get(&p.name), &p.default) {
            (Some(v), _) => v.clone(),
            (None, Some(d)) => d.clone(),
            (None, None) => return Err(BindError::MissingArg(p.name.clone())),
        };
        if !p.ty.accepts(&value) {
            return Err(BindError::TypeMismatch { name: p.name.clone(), expected: p.ty, found: value.type_name() });
        }
        if p.ty == SemanticType::ImageRef && image.is_none() {
            image = value.as_text().and_then(|t| t.parse().ok());
        }
        bound.insert(p.name.clone(), value);
    }
    Ok(ToolInput { image: image.ok_or(BindError::NoImage)?, args: bound, inputs: Vec::new() })
}

pub fn validate_and_bind(descriptor: &AtomicDescriptor, args: &IndexMap<String, ArgValue>) -> Result<ToolInput, BindError> {
    bind_args(&descriptor.input_schema, args)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(pairs: &[(&str, ArgValue)]) -> IndexMap<String, ArgValue> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
    }

    fn detect() -> AtomicDescriptor {
        Registry::defaults_descriptors().into_iter().find(|d| d.name == "detect_objects").unwrap()
    }

    #[test]
    fn threshold_default_is_filled() {
        let input = detect()
            .bind(&args(&[
                ("image", ArgValue::Text("image-0".into())),
                ("text_labels", ArgValue::TextList(vec!["lamp".into()])),
            ]))
            .unwrap();
        assert_eq!(input.number("threshold"), Some(0.1));
        assert_eq!(input.image, ImageRef(0));
    }

    #[test]
    fn type_mismatch_and_unknown_arg() {
        let d = detect();
        let err = d
            .bind(&args(&[("image", ArgValue::Text("image-0".into())), ("text_labels", ArgValue::Number(5.0))]))
            .unwrap_err();
        assert!(matches!(err, BindError::TypeMismatch { ref name, .. } if name == "text_labels"));
        let err = d
            .bind(&args(&[
                ("image", ArgValue::Text("image-0".into())),
                ("text_labels", ArgValue::TextList(vec![])),
                ("foo", ArgValue::Number(1.0)),
            ]))
            .unwrap_err();
        assert_eq!(err, BindError::UnknownArg("foo".into()));
        let err = d.bind(&args(&[("image", ArgValue::Text("image-0".into()))])).unwrap_err();
        assert_eq!(err, BindError::MissingArg("text_labels".into()));
    }

    #[test]
    fn image_must_be_canonical_ref() {
        let err = detect()
            .bind(&args(&[
                ("image", ArgValue::Text("photo.png".into())),
                ("text_labels", ArgValue::TextList(vec![])),
            ]))
            .unwrap_err();
        assert!(matches!(err, BindError::TypeMismatch { .. }));
    }

    #[test]
    fn schema_invariants() {
        let bad = AtomicDescriptor::new(
            "x",
            vec![ParamSpec { name: "a".into(), ty: SemanticType::Number, required: false, default: None }],
            OutputKind::ComputeResult,
        );
        assert_eq!(bad.validate(), Err(DescriptorError::OptionalWithoutDefault("a".into())));
        let bad = AtomicDescriptor::new(
            "x",
            vec![ParamSpec {
                name: "a".into(),
                ty: SemanticType::Number,
                required: true,
                default: Some(ArgValue::Number(1.0)),
            }],
            OutputKind::ComputeResult,
        );
        assert_eq!(bad.validate(), Err(DescriptorError::RequiredWithDefault("a".into())));
        for d in Registry::defaults_descriptors() {
            d.validate().unwrap();
        }
    }
}
