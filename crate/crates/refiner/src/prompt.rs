//! Prompt templates built from independently switchable instruction blocks.
//!
//! The description prompt is the bare compare instruction followed by one
//! block per enabled component, in a fixed order. Template files use
//! `{{scene}}` and `{{k}}` placeholders.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SIMILARITIES_HEADER: &str = "SIMILARITIES:";
pub const DISSIMILARITIES_HEADER: &str = "DISSIMILARITIES:";
pub const RANKING_MARKER: &str = "FINAL_RANKING:";

const SCENE_PLACEHOLDER: &str = "{{scene}}";
const K_PLACEHOLDER: &str = "{{k}}";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SceneKind {
    Indoor,
    #[default]
    Outdoor,
}

impl SceneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SceneKind::Indoor => "indoor",
            SceneKind::Outdoor => "outdoor",
        }
    }
}

impl fmt::Display for SceneKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SceneKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "indoor" => Ok(SceneKind::Indoor),
            "outdoor" => Ok(SceneKind::Outdoor),
            other => Err(Error::InvalidTemplate(format!(
                "unknown scene kind {other:?} (expected indoor or outdoor)"
            ))),
        }
    }
}

/// Which optional instruction blocks go into the description prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptComponents {
    pub similarity_dissimilarity_hints: bool,
    pub object_matching_hints: bool,
    pub irrelevant_detail_constraints: bool,
    pub text_recognition_hint: bool,
}

impl Default for PromptComponents {
    fn default() -> Self {
        Self::all()
    }
}

impl PromptComponents {
    pub fn all() -> Self {
        Self {
            similarity_dissimilarity_hints: true,
            object_matching_hints: true,
            irrelevant_detail_constraints: true,
            text_recognition_hint: true,
        }
    }

    pub fn none() -> Self {
        Self {
            similarity_dissimilarity_hints: false,
            object_matching_hints: false,
            irrelevant_detail_constraints: false,
            text_recognition_hint: false,
        }
    }

    /// Full prompt minus the object-matching block.
    pub fn without_object_matching() -> Self {
        Self {
            object_matching_hints: false,
            ..Self::all()
        }
    }

    /// Full prompt minus object matching and the irrelevant-detail constraints.
    pub fn without_constraints() -> Self {
        Self {
            object_matching_hints: false,
            irrelevant_detail_constraints: false,
            ..Self::all()
        }
    }
}

/// Raw template texts, one per block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplateSet {
    pub describe_base: String,
    pub describe_similarity: String,
    pub describe_object_matching: String,
    pub describe_constraints: String,
    pub describe_text_recognition: String,
    pub rerank: String,
}

const FILES: [&str; 6] = [
    "describe_base.txt",
    "describe_similarity.txt",
    "describe_object_matching.txt",
    "describe_constraints.txt",
    "describe_text_recognition.txt",
    "rerank.txt",
];

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self {
            describe_base: include_str!("../templates/describe_base.txt").into(),
            describe_similarity: include_str!("../templates/describe_similarity.txt").into(),
            describe_object_matching: include_str!("../templates/describe_object_matching.txt")
                .into(),
            describe_constraints: include_str!("../templates/describe_constraints.txt").into(),
            describe_text_recognition: include_str!("../templates/describe_text_recognition.txt")
                .into(),
            rerank: include_str!("../templates/rerank.txt").into(),
        }
    }

    /// Built-in templates, with any file of the same name in `dir` taking
    /// precedence.
    pub fn with_overrides(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut set = Self::builtin();
        for name in FILES {
            let path = dir.join(name);
            if !path.exists() {
                continue;
            }
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            *set.slot(name) = text;
        }
        Ok(set)
    }

    fn slot(&mut self, file: &str) -> &mut String {
        match file {
            "describe_base.txt" => &mut self.describe_base,
            "describe_similarity.txt" => &mut self.describe_similarity,
            "describe_object_matching.txt" => &mut self.describe_object_matching,
            "describe_constraints.txt" => &mut self.describe_constraints,
            "describe_text_recognition.txt" => &mut self.describe_text_recognition,
            _ => &mut self.rerank,
        }
    }
}

/// Description and rerank prompts for one scene kind and component set.
///
/// `rerank_prompt_text` keeps its `{{k}}` placeholder until
/// [`PromptTemplate::rerank_text`] fills it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub scene_kind: SceneKind,
    pub components: PromptComponents,
    pub description_prompt_text: String,
    pub rerank_prompt_text: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::compose(
            &TemplateSet::builtin(),
            SceneKind::default(),
            PromptComponents::all(),
        )
        .expect("built-in templates are valid")
    }
}

impl PromptTemplate {
    pub fn new(scene_kind: SceneKind, components: PromptComponents) -> Self {
        Self::compose(&TemplateSet::builtin(), scene_kind, components)
            .expect("built-in templates are valid")
    }

    pub fn compose(
        set: &TemplateSet,
        scene_kind: SceneKind,
        components: PromptComponents,
    ) -> Result<Self> {
        let blocks = [
            (true, &set.describe_base),
            (
                components.similarity_dissimilarity_hints,
                &set.describe_similarity,
            ),
            (
                components.object_matching_hints,
                &set.describe_object_matching,
            ),
            (
                components.irrelevant_detail_constraints,
                &set.describe_constraints,
            ),
            (
                components.text_recognition_hint,
                &set.describe_text_recognition,
            ),
        ];
        let description_prompt_text = blocks
            .iter()
            .filter(|(on, _)| *on)
            .map(|(_, text)| fill_scene(text, scene_kind))
            .collect::<Vec<_>>()
            .join("\n\n");
        let template = Self {
            scene_kind,
            components,
            description_prompt_text,
            rerank_prompt_text: fill_scene(&set.rerank, scene_kind),
        };
        template.validate()?;
        Ok(template)
    }

    pub fn validate(&self) -> Result<()> {
        let desc = &self.description_prompt_text;
        if desc.trim().is_empty() {
            return Err(Error::InvalidTemplate("empty description prompt".into()));
        }
        if self.components.similarity_dissimilarity_hints
            && !(desc.contains(SIMILARITIES_HEADER) && desc.contains(DISSIMILARITIES_HEADER))
        {
            return Err(Error::InvalidTemplate(format!(
                "description prompt must name the {SIMILARITIES_HEADER} and {DISSIMILARITIES_HEADER} sections"
            )));
        }
        if let Some(p) = leftover_placeholder(desc) {
            return Err(Error::InvalidTemplate(format!(
                "unresolved placeholder {p} in description prompt"
            )));
        }
        if !self.rerank_prompt_text.contains(RANKING_MARKER) {
            return Err(Error::InvalidTemplate(format!(
                "rerank prompt must ask for a {RANKING_MARKER} line"
            )));
        }
        if let Some(p) = leftover_placeholder(&self.rerank_prompt_text.replace(K_PLACEHOLDER, "")) {
            return Err(Error::InvalidTemplate(format!(
                "unresolved placeholder {p} in rerank prompt"
            )));
        }
        Ok(())
    }

    /// Rerank instruction for `k` candidates.
    pub fn rerank_text(&self, k: usize) -> String {
        self.rerank_prompt_text
            .replace(K_PLACEHOLDER, &k.to_string())
    }
}

fn fill_scene(text: &str, scene: SceneKind) -> String {
    text.trim().replace(SCENE_PLACEHOLDER, scene.as_str())
}

fn leftover_placeholder(text: &str) -> Option<String> {
    let start = text.find("{{")?;
    let end = text[start..]
        .find("}}")
        .map_or(text.len(), |e| start + e + 2);
    Some(text[start..end].to_string())
}
