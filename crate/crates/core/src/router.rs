//! Query routing: classify a clinician question, answer it per category and
//! merge the drafts into one response.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::calibrate::RiskClass;
use crate::cohort::{PatientRecord, Sex};
use crate::error::{Error, Result};
use crate::explain::{ImportanceEntry, DEFAULT_TOP_K};
use crate::guidelines::{tokenize, Embedder, SearchHit, Section, VectorStore};
use crate::model::RiskEngine;

pub const PROMPT_VERSION: &str = "v1";
pub const DEFAULT_RETRIEVAL_K: usize = 3;

const MODEL_TERMS: &[&str] = &[
    "risk", "risks", "predict", "predicted", "prediction", "predictions", "probability", "likelihood", "chance",
    "score", "model", "feature", "features", "driver", "drivers", "driving", "factor", "factors", "contributing",
];
const GUIDELINE_TERMS: &[&str] = &[
    "guideline", "guidelines", "guidance", "management", "manage", "managed", "managing", "recommend",
    "recommended", "recommends", "recommendation", "recommendations", "evidence", "protocol", "acg",
    "endoscopy", "endoscopic", "transfusion", "transfuse",
];
const DRIVER_TERMS: &[&str] = &[
    "feature", "features", "driver", "drivers", "driving", "factor", "factors", "contributing", "contribute",
    "contributes", "why", "important", "importance",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryCategory {
    Model,
    Guidelines,
    General,
}

impl QueryCategory {
    pub const ALL: [QueryCategory; 3] = [QueryCategory::Model, QueryCategory::Guidelines, QueryCategory::General];

    pub fn label(self) -> &'static str {
        match self {
            QueryCategory::Model => "model",
            QueryCategory::Guidelines => "guidelines",
            QueryCategory::General => "general",
        }
    }

    fn heading(self) -> &'static str {
        match self {
            QueryCategory::Model => "Model",
            QueryCategory::Guidelines => "Guidelines",
            QueryCategory::General => "General",
        }
    }
}

impl fmt::Display for QueryCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for QueryCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "model" => Ok(QueryCategory::Model),
            "guidelines" | "guideline" => Ok(QueryCategory::Guidelines),
            "general" => Ok(QueryCategory::General),
            other => Err(Error::Validation(format!("unknown query category {other:?}"))),
        }
    }
}

/// Nonempty, deduplicated set of categories, iterated in merge order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<QueryCategory>", into = "Vec<QueryCategory>")]
pub struct QueryCategorySet(BTreeSet<QueryCategory>);

impl QueryCategorySet {
    pub fn new(categories: impl IntoIterator<Item = QueryCategory>) -> Result<Self> {
        let set: BTreeSet<_> = categories.into_iter().collect();
        if set.is_empty() {
            return Err(Error::Validation("query category set must be nonempty".into()));
        }
        Ok(QueryCategorySet(set))
    }

    pub fn single(category: QueryCategory) -> Self {
        QueryCategorySet(BTreeSet::from([category]))
    }

    pub fn contains(&self, category: QueryCategory) -> bool {
        self.0.contains(&category)
    }

    pub fn iter(&self) -> impl Iterator<Item = QueryCategory> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn labels(&self) -> Vec<&'static str> {
        self.iter().map(QueryCategory::label).collect()
    }
}

impl TryFrom<Vec<QueryCategory>> for QueryCategorySet {
    type Error = Error;

    fn try_from(v: Vec<QueryCategory>) -> Result<Self> {
        QueryCategorySet::new(v)
    }
}

impl From<QueryCategorySet> for Vec<QueryCategory> {
    fn from(s: QueryCategorySet) -> Self {
        s.0.into_iter().collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }
}

/// Structured model output handed to the model-category handler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskPayload {
    pub probability: f64,
    pub risk_class: RiskClass,
    pub threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub top_features: Option<Vec<ImportanceEntry>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draft {
    pub category: QueryCategory,
    pub text: String,
}

/// What a completion is for, with the structured values behind the prompt.
/// Remote backends only read `messages`; the offline backend renders from
/// these values.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum Task {
    Classify { query: String },
    Model { query: String, risk: RiskPayload },
    Guidelines { query: String, hits: Vec<SearchHit> },
    General { query: String },
    Synthesize { drafts: Vec<Draft> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    pub task: Task,
    pub messages: Vec<Message>,
    pub temperature: f64,
}

impl CompletionRequest {
    pub fn system_prompt(&self) -> &str {
        self.messages
            .iter()
            .find(|m| m.role == Role::System)
            .map(|m| m.content.as_str())
            .unwrap_or("")
    }
}

pub trait CompletionBackend: Send + Sync {
    fn id(&self) -> String;
    fn complete(&self, request: &CompletionRequest) -> Result<String>;
}

/// Deterministic keyword and template backend.
#[derive(Debug, Clone, Copy, Default)]
pub struct OfflineBackend;

/// Keyword rules: every matching category is returned, `general` when none match.
pub fn keyword_categories(query: &str) -> QueryCategorySet {
    let tokens: BTreeSet<String> = tokenize(query).collect();
    let hit = |terms: &[&str]| terms.iter().any(|t| tokens.contains(*t));
    let mut out = Vec::new();
    if hit(MODEL_TERMS) {
        out.push(QueryCategory::Model);
    }
    if hit(GUIDELINE_TERMS) {
        out.push(QueryCategory::Guidelines);
    }
    if out.is_empty() {
        out.push(QueryCategory::General);
    }
    QueryCategorySet::new(out).expect("nonempty")
}

/// Whether a model question asks which features drive the prediction.
pub fn asks_for_drivers(query: &str) -> bool {
    tokenize(query).any(|t| DRIVER_TERMS.contains(&t.as_str()))
}

fn percent(p: f64) -> String {
    format!("{:.1}%", 100.0 * p)
}

fn render_risk(risk: &RiskPayload) -> String {
    let mut s = format!(
        "Predicted risk of hospital-based intervention: {} (probability {:.4}).\nRisk class: {} (threshold {:.4}).",
        percent(risk.probability),
        risk.probability,
        risk.risk_class.label(),
        risk.threshold
    );
    if let Some(features) = &risk.top_features {
        s.push_str("\nMost influential features:");
        for (i, f) in features.iter().enumerate() {
            s.push_str(&format!("\n{}. {} (local slope {:+.4})", i + 1, f.feature, f.slope));
        }
    }
    s
}

fn dedup_sections(hits: &[SearchHit]) -> Vec<Section> {
    let mut out: Vec<Section> = Vec::new();
    for h in hits {
        if !out.contains(&h.section) {
            out.push(h.section);
        }
    }
    out
}

impl CompletionBackend for OfflineBackend {
    fn id(&self) -> String {
        "offline".into()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String> {
        Ok(match &request.task {
            Task::Classify { query } => keyword_categories(query).labels().join(","),
            Task::Model { risk, .. } => {
                let verdict = match risk.risk_class {
                    RiskClass::VeryLowRisk => "The patient is considered very low risk: the predicted risk is below the 99% sensitivity threshold.",
                    RiskClass::NotVeryLowRisk => "The patient is not very low risk: the predicted risk is at or above the 99% sensitivity threshold.",
                };
                format!("{}\n{}", render_risk(risk), verdict)
            }
            Task::Guidelines { hits, .. } => {
                let first = hits
                    .first()
                    .ok_or_else(|| Error::Retrieval("no guideline excerpt retrieved".into()))?;
                let sources: Vec<String> = dedup_sections(hits).iter().map(|s| format!("[{}]", s.label())).collect();
                format!(
                    "According to the {} guidance, the most relevant recommendation is quoted below.\n\nEvidence:\n{}\n\nSources: {}",
                    first.section.title(),
                    first.text,
                    sources.join(" ")
                )
            }
            Task::General { query } => format!(
                "General gastroenterology information for medical professionals.\nQuestion: {query}\nNo patient-specific model output or guideline excerpt was used for this answer. Consult the relevant literature and local protocols."
            ),
            Task::Synthesize { drafts } => drafts
                .iter()
                .map(|d| format!("## {}\n{}", d.category.heading(), d.text))
                .collect::<Vec<_>>()
                .join("\n\n"),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub query: String,
    pub categories: Vec<QueryCategory>,
}

/// Versioned prompt templates. `{{name}}` placeholders are filled at call time.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub version: String,
    pub classifier: String,
    pub model: String,
    pub guidelines: String,
    pub general: String,
    pub synthesizer: String,
    pub fewshot: Vec<FewShotExample>,
}

impl PromptSet {
    pub fn builtin() -> Self {
        PromptSet {
            version: PROMPT_VERSION.into(),
            classifier: include_str!("../prompts/v1/classifier.txt").into(),
            model: include_str!("../prompts/v1/model.txt").into(),
            guidelines: include_str!("../prompts/v1/guidelines.txt").into(),
            general: include_str!("../prompts/v1/general.txt").into(),
            synthesizer: include_str!("../prompts/v1/synthesizer.txt").into(),
            fewshot: serde_json::from_str(include_str!("../prompts/v1/fewshot.json")).expect("bundled few-shot fixtures"),
        }
    }

    /// Loads a prompt directory laid out like `prompts/v1`.
    pub fn from_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| std::fs::read_to_string(dir.join(name));
        let version = dir
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "custom".into());
        Ok(PromptSet {
            version,
            classifier: read("classifier.txt")?,
            model: read("model.txt")?,
            guidelines: read("guidelines.txt")?,
            general: read("general.txt")?,
            synthesizer: read("synthesizer.txt")?,
            fewshot: serde_json::from_str(&read("fewshot.json")?)?,
        })
    }
}

fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{{{k}}}}}"), v);
    }
    out
}

/// Plain-text rendering of a patient record used as prompt context.
pub fn patient_context(patient: &PatientRecord) -> String {
    let sex = match patient.sex {
        Sex::Female => "female",
        Sex::Male => "male",
    };
    let values = |m: &std::collections::BTreeMap<String, f64>| {
        if m.is_empty() {
            "none recorded".to_string()
        } else {
            m.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(", ")
        }
    };
    let codes = |s: &BTreeSet<String>| {
        if s.is_empty() {
            "none".to_string()
        } else {
            s.iter().cloned().collect::<Vec<_>>().join(", ")
        }
    };
    format!(
        "Patient {}: {}-year-old {}.\nVital signs: {}.\nLaboratory values: {}.\nHistory CCS codes: {}.\nMedication classes: {}.",
        patient.id,
        patient.age,
        sex,
        values(&patient.nursing),
        values(&patient.labs),
        codes(&patient.history_ccs),
        codes(&patient.meds_ccs)
    )
}

/// Parses a classifier reply. Returns `None` when no category name is present.
pub fn parse_categories(reply: &str) -> Option<QueryCategorySet> {
    let found: Vec<QueryCategory> = tokenize(reply).filter_map(|t| t.parse().ok()).collect();
    QueryCategorySet::new(found).ok()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievedRef {
    pub chunk_id: usize,
    pub section: Section,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub query: String,
    pub session_id: Option<String>,
    pub categories: QueryCategorySet,
    pub retrieved: Vec<RetrievedRef>,
    pub drafts: Vec<Draft>,
    pub final_answer: String,
    pub citations: Vec<Section>,
    pub risk: Option<RiskPayload>,
    pub prompt_version: String,
    pub backend: String,
}

pub struct GuidelineAnswer {
    pub draft: Draft,
    pub hits: Vec<SearchHit>,
    pub citations: Vec<Section>,
}

#[derive(Clone)]
pub struct Router {
    engine: Arc<RiskEngine>,
    store: Arc<VectorStore>,
    embedder: Arc<dyn Embedder>,
    backend: Arc<dyn CompletionBackend>,
    prompts: Arc<PromptSet>,
    pub retrieval_k: usize,
    pub temperature: f64,
}

impl Router {
    pub fn new(
        engine: Arc<RiskEngine>,
        store: Arc<VectorStore>,
        embedder: Arc<dyn Embedder>,
        backend: Arc<dyn CompletionBackend>,
        prompts: Arc<PromptSet>,
    ) -> Self {
        Router {
            engine,
            store,
            embedder,
            backend,
            prompts,
            retrieval_k: DEFAULT_RETRIEVAL_K,
            temperature: 0.0,
        }
    }

    pub fn engine(&self) -> &RiskEngine {
        &self.engine
    }

    pub fn prompts(&self) -> &PromptSet {
        &self.prompts
    }

    fn request(&self, task: Task, system: String, user: &str) -> CompletionRequest {
        CompletionRequest {
            task,
            messages: vec![Message::system(system), Message::user(user)],
            temperature: self.temperature,
        }
    }

    fn patient_block(patient: Option<&PatientRecord>) -> String {
        patient.map(patient_context).unwrap_or_else(|| "No patient loaded.".into())
    }

    pub fn classify_query(&self, query: &str) -> Result<QueryCategorySet> {
        if query.trim().is_empty() {
            return Err(Error::Validation("query must be nonempty".into()));
        }
        let examples = self
            .prompts
            .fewshot
            .iter()
            .map(|e| {
                let labels: Vec<&str> = e.categories.iter().map(|c| c.label()).collect();
                format!("Query: {}\nCategories: {}", e.query, labels.join(","))
            })
            .collect::<Vec<_>>()
            .join("\n\n");
        let system = render(&self.prompts.classifier, &[("examples", &examples)]);
        let req = self.request(Task::Classify { query: query.to_string() }, system, query);
        let reply = self.backend.complete(&req)?;
        Ok(parse_categories(&reply).unwrap_or_else(|| {
            log::warn!("unparseable classifier reply {reply:?}; routing to general");
            QueryCategorySet::single(QueryCategory::General)
        }))
    }

    pub fn risk_payload(&self, patient: &PatientRecord, query: &str) -> Result<RiskPayload> {
        let (probability, risk_class) = self.engine.predict(patient)?;
        let top_features = if asks_for_drivers(query) {
            Some(self.engine.top_features(patient, DEFAULT_TOP_K)?.entries)
        } else {
            None
        };
        Ok(RiskPayload {
            probability,
            risk_class,
            threshold: self.engine.model().threshold(),
            top_features,
        })
    }

    pub fn answer_model_query(&self, patient: Option<&PatientRecord>, query: &str) -> Result<(Draft, RiskPayload)> {
        let patient = patient.ok_or_else(|| Error::SessionState("no patient loaded in session".into()))?;
        let risk = self.risk_payload(patient, query)?;
        let system = render(
            &self.prompts.model,
            &[("patient", &patient_context(patient)), ("risk", &render_risk(&risk))],
        );
        let req = self.request(
            Task::Model {
                query: query.to_string(),
                risk: risk.clone(),
            },
            system,
            query,
        );
        let text = self.backend.complete(&req)?;
        Ok((Draft { category: QueryCategory::Model, text }, risk))
    }

    pub fn answer_guideline_query(&self, patient: Option<&PatientRecord>, query: &str) -> Result<GuidelineAnswer> {
        let hits = self.store.search(self.embedder.as_ref(), query, self.retrieval_k)?;
        let context = hits
            .iter()
            .map(|h| format!("[{}] {}", h.section.label(), h.text))
            .collect::<Vec<_>>()
            .join("\n\n");
        let system = render(
            &self.prompts.guidelines,
            &[("patient", &Self::patient_block(patient)), ("context", &context)],
        );
        let req = self.request(
            Task::Guidelines {
                query: query.to_string(),
                hits: hits.clone(),
            },
            system,
            query,
        );
        let text = self.backend.complete(&req)?;
        let citations = dedup_sections(&hits);
        Ok(GuidelineAnswer {
            draft: Draft { category: QueryCategory::Guidelines, text },
            hits,
            citations,
        })
    }

    pub fn answer_general_query(&self, patient: Option<&PatientRecord>, query: &str) -> Result<Draft> {
        if query.trim().is_empty() {
            return Err(Error::Validation("query must be nonempty".into()));
        }
        let system = render(&self.prompts.general, &[("patient", &Self::patient_block(patient))]);
        let req = self.request(Task::General { query: query.to_string() }, system, query);
        let text = self.backend.complete(&req)?;
        Ok(Draft { category: QueryCategory::General, text })
    }

    /// One draft is returned as is; several are merged by the backend in
    /// category order.
    pub fn synthesize(&self, patient: Option<&PatientRecord>, query: &str, drafts: &[Draft]) -> Result<String> {
        match drafts {
            [] => Err(Error::Internal("nothing to synthesize".into())),
            [only] => Ok(only.text.clone()),
            _ => {
                let mut ordered = drafts.to_vec();
                ordered.sort_by_key(|d| d.category);
                let listing = ordered
                    .iter()
                    .map(|d| format!("[{}]\n{}", d.category.label(), d.text))
                    .collect::<Vec<_>>()
                    .join("\n\n");
                let system = render(
                    &self.prompts.synthesizer,
                    &[("patient", &Self::patient_block(patient)), ("drafts", &listing)],
                );
                let req = self.request(Task::Synthesize { drafts: ordered }, system, query);
                self.backend.complete(&req)
            }
        }
    }

    /// Classify, answer each category, then merge.
    pub fn exchange(&self, session_id: Option<&str>, patient: Option<&PatientRecord>, query: &str) -> Result<ChatExchange> {
        let categories = self.classify_query(query)?;
        let mut drafts = Vec::new();
        let mut risk = None;
        let mut retrieved = Vec::new();
        let mut citations = Vec::new();
        for category in categories.iter() {
            match category {
                QueryCategory::Model => {
                    let (draft, payload) = self.answer_model_query(patient, query)?;
                    drafts.push(draft);
                    risk = Some(payload);
                }
                QueryCategory::Guidelines => {
                    let answer = self.answer_guideline_query(patient, query)?;
                    retrieved = answer
                        .hits
                        .iter()
                        .map(|h| RetrievedRef {
                            chunk_id: h.chunk_id,
                            section: h.section,
                            score: h.score,
                        })
                        .collect();
                    citations = answer.citations;
                    drafts.push(answer.draft);
                }
                QueryCategory::General => drafts.push(self.answer_general_query(patient, query)?),
            }
        }
        let final_answer = self.synthesize(patient, query, &drafts)?;
        Ok(ChatExchange {
            query: query.to_string(),
            session_id: session_id.map(str::to_string),
            categories,
            retrieved,
            drafts,
            final_answer,
            citations,
            risk,
            prompt_version: self.prompts.version.clone(),
            backend: self.backend.id(),
        })
    }
}
