use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, Dialogue, GroundTruth, SentenceRef, SpeakerRole, Turn};
use crate::{seeds, Error, Result, SectionLabel};

/// Inclusive integer range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Range {
    pub min: usize,
    pub max: usize,
}

impl Range {
    pub const fn new(min: usize, max: usize) -> Self {
        Self { min, max }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> usize {
        rng.random_range(self.min..=self.max)
    }
}

/// Target sentence-level share of each section.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectionDistribution {
    pub history_taking: f64,
    pub summarization: f64,
    pub education: f64,
    pub care_plan: f64,
    pub other: f64,
}

impl SectionDistribution {
    /// Sentence-level distribution of the expert-labeled test set the method
    /// was evaluated on.
    pub const fn clinical() -> Self {
        Self {
            history_taking: 0.265,
            summarization: 0.036,
            education: 0.053,
            care_plan: 0.041,
            other: 0.603,
        }
    }

    pub fn as_array(&self) -> [f64; SectionLabel::COUNT] {
        [
            self.history_taking,
            self.summarization,
            self.education,
            self.care_plan,
            self.other,
        ]
    }

    pub fn get(&self, l: SectionLabel) -> f64 {
        self.as_array()[l.index()]
    }

    /// Shares rescaled to sum to exactly 1.
    pub fn normalized(&self) -> [f64; SectionLabel::COUNT] {
        let a = self.as_array();
        let total: f64 = a.iter().sum();
        a.map(|p| p / total)
    }
}

impl Default for SectionDistribution {
    fn default() -> Self {
        Self::clinical()
    }
}

/// Sentence templates per section plus slot fillers.
///
/// A template references slots as `{name}`; `{Name}` capitalizes the filler
/// and a trailing digit (`{symptom2}`) draws a filler distinct from the other
/// uses of the same slot in that sentence.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TemplatePools {
    pub history_taking: Vec<String>,
    pub summarization: Vec<String>,
    /// Openers of summarization turns; these carry the summarization cue words.
    pub summary_openers: Vec<String>,
    pub education: Vec<String>,
    pub care_plan: Vec<String>,
    pub other: Vec<String>,
    pub patient: Vec<String>,
    /// Templates whose section depends on the turn they appear in.
    pub shared: Vec<SharedPool>,
    pub slots: BTreeMap<String, Vec<String>>,
}

/// Templates usable by any of `sections`; a sentence drawn from here is
/// labeled with the section it was generated for.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharedPool {
    pub sections: Vec<SectionLabel>,
    pub templates: Vec<String>,
}

impl TemplatePools {
    pub fn for_section(&self, l: SectionLabel) -> &[String] {
        match l {
            SectionLabel::HistoryTaking => &self.history_taking,
            SectionLabel::Summarization => &self.summarization,
            SectionLabel::Education => &self.education,
            SectionLabel::CarePlan => &self.care_plan,
            SectionLabel::Other => &self.other,
        }
    }

    /// Shared templates available to `l`, in pool order.
    pub fn shared_for(&self, l: SectionLabel) -> Vec<&String> {
        self.shared
            .iter()
            .filter(|p| p.sections.contains(&l))
            .flat_map(|p| &p.templates)
            .collect()
    }
}

fn owned(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

impl Default for TemplatePools {
    fn default() -> Self {
        let mut slots = BTreeMap::new();
        slots.insert(
            "symptom".to_string(),
            owned(&[
                "fever",
                "headache",
                "cough",
                "sore throat",
                "chest pain",
                "back pain",
                "purple feet",
                "rash",
                "nausea",
                "dizziness",
                "shortness of breath",
                "stomach pain",
                "fatigue",
                "ear pain",
                "joint pain",
                "swelling",
            ]),
        );
        slots.insert(
            "duration".to_string(),
            owned(&["two days", "three days", "a week", "ten days", "two weeks", "a month", "several weeks"]),
        );
        slots.insert(
            "medication".to_string(),
            owned(&[
                "ibuprofen",
                "acetaminophen",
                "amoxicillin",
                "an antihistamine",
                "a saline spray",
                "omeprazole",
                "a steroid cream",
                "naproxen",
            ]),
        );
        slots.insert(
            "frequency".to_string(),
            owned(&["twice a day", "every six hours", "once daily", "at bedtime", "with meals"]),
        );
        slots.insert(
            "activity".to_string(),
            owned(&["walk", "climb stairs", "eat", "lie down", "exercise", "bend over", "stand up"]),
        );
        slots.insert(
            "condition".to_string(),
            owned(&[
                "diabetes",
                "a viral infection",
                "acid reflux",
                "a migraine",
                "seasonal allergies",
                "a urinary tract infection",
                "high blood pressure",
                "a muscle strain",
                "poor circulation",
            ]),
        );
        slots.insert(
            "test".to_string(),
            owned(&["a blood test", "a urine test", "a chest x-ray", "a throat swab", "an ultrasound"]),
        );
        slots.insert(
            "followup".to_string(),
            owned(&["in three days", "next week", "in two weeks", "if things get worse", "after the test results"]),
        );
        slots.insert(
            "name".to_string(),
            owned(&["Sam", "Alex", "Jordan", "Taylor", "Casey", "Morgan"]),
        );

        Self {
            history_taking: owned(&[
                "How long have you had the {symptom}?",
                "When did the {symptom} start?",
                "Does the {symptom} get worse when you {activity}?",
                "Have you noticed any {symptom2} along with the {symptom}?",
                "Have you ever been diagnosed with {condition}?",
                "Are you currently taking anything for the {symptom}?",
                "Do you have any allergies to medications?",
                "On a scale from one to ten, how bad is the {symptom}?",
                "Is the {symptom} constant or does it come and go?",
                "Does anyone in your family have {condition}?",
                "Have you tried {medication} for the {symptom} so far?",
                "Did you have any {symptom} in the last {duration}?",
                "Okay, and any {symptom}?",
                "Alright, anything else going on?",
                "Great, and how are you sleeping?",
            ]),
            summarization: owned(&[
                "So you have had {symptom} for about {duration}.",
                "So you mentioned the {symptom} gets worse when you {activity}.",
                "So you told me you have not had any {symptom2} with the {symptom}.",
                "You mentioned you have been taking {medication} without much relief.",
                "So it sounds like the {symptom} started about {duration} ago and has been getting worse.",
                "You told me you have no history of {condition}.",
                "It sounds like you have no {symptom2} and no {symptom}.",
                "So far it sounds like the {symptom} has not improved with rest.",
                "Okay, so {symptom} for {duration}.",
                "Alright, so no {symptom} at all.",
            ]),
            summary_openers: owned(&[
                "To summarize, you have had {symptom} for {duration}.",
                "Let me summarize what you have told me so far.",
                "Just to sum up, the {symptom} started {duration} ago.",
                "So to summarize, you have {symptom} and {symptom2}.",
                "In summary, you have been dealing with {symptom} for {duration}.",
            ]),
            education: owned(&[
                "{Symptom} is often caused by {condition}.",
                "{Condition} can cause {symptom} in some people.",
                "{Symptom} can be a sign of {condition}.",
                "Most cases of {symptom} from {condition} get better within {duration}.",
                "{Medication} works by reducing inflammation in the body.",
                "It is common to have {symptom} when you have {condition}.",
                "{Condition} is usually not serious but it can take {duration} to clear.",
                "Antibiotics do not help with viral infections like this one.",
                "Dehydration can make {symptom} feel much worse.",
                "Stress and poor sleep can make {symptom} last longer.",
                "Okay, that is very common.",
                "Alright, that usually settles on its own.",
            ]),
            care_plan: owned(&[
                "I recommend taking {medication} {frequency}.",
                "Please take {medication} {frequency} for {duration}.",
                "I would like you to get {test} {followup}.",
                "Please schedule a follow-up visit {followup}.",
                "You should drink plenty of water and rest.",
                "If the {symptom} gets worse, please go to urgent care.",
                "I am sending a prescription for {medication} to your pharmacy.",
                "Try to avoid activities that make the {symptom} worse.",
                "Apply a warm compress to the area {frequency}.",
                "Keep a diary of your {symptom} for the next {duration}.",
                "Okay, let us do that then.",
                "Alright, I will send that over now.",
            ]),
            other: owned(&[
                "Hi, thanks for reaching out today.",
                "Hello {name}, I am the doctor who will be helping you.",
                "Give me a moment to review your chart.",
                "Thank you for that information.",
                "Let me know if you have any other questions.",
                "You're welcome, take care!",
                "I hope you feel better soon.",
                "Thanks for your patience.",
                "Sorry to hear that you are not feeling well.",
                "Okay, got it.",
                "I hope you are still enjoying the summer despite all this.",
                "Great, that is helpful to know.",
                "Is there anything else I can help you with today?",
                "Have a good rest of your day, {name}.",
            ]),
            patient: owned(&[
                "I have had {symptom} for {duration}.",
                "My {symptom} started {duration} ago.",
                "It gets worse when I {activity}.",
                "I took some {medication} but it did not help.",
                "No, I do not have any allergies.",
                "Yes, my mother has {condition}.",
                "Thank you, doctor.",
                "Okay, that makes sense.",
                "Should I be worried about the {symptom}?",
                "Hi, I am not feeling well.",
            ]),
            shared: vec![
                SharedPool {
                    sections: vec![SectionLabel::HistoryTaking, SectionLabel::Summarization],
                    templates: owned(&[
                        "No {symptom} and no {symptom2}.",
                        "The {symptom} started {duration} ago.",
                        "And it gets worse when you {activity}.",
                        "And {medication} has not helped much.",
                    ]),
                },
                SharedPool {
                    sections: vec![SectionLabel::Education, SectionLabel::CarePlan],
                    templates: owned(&[
                        "Drinking plenty of water helps with {symptom}.",
                        "Rest is important while you recover from {condition}.",
                        "{Medication} can help with the {symptom}.",
                        "Avoiding things that make you {activity} less can slow your recovery.",
                        "Warm compresses often ease {symptom}.",
                    ]),
                },
            ],
            slots,
        }
    }
}

/// Parameters of the synthetic corpus generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub dialogues: usize,
    /// Professional turns per dialogue; each is preceded by a patient turn.
    pub professional_turns: Range,
    pub sentences_per_turn: Range,
    pub patient_sentences: Range,
    /// Probability that a professional turn mixes in a second section.
    pub mixing_probability: f64,
    /// In a mixed turn, probability that each sentence after the first comes
    /// from the second section.
    pub mixed_share: f64,
    /// Probability that a mixed turn's second section is the lead's partner
    /// (education with care plan, history taking with summarization) instead
    /// of a draw from `distribution`.
    pub partner_probability: f64,
    /// Probability that a summarization-led turn opens with a cue-word sentence.
    pub summary_keyword_probability: f64,
    /// Probability that a sentence uses a shared template when its section has one.
    pub shared_probability: f64,
    pub distribution: SectionDistribution,
    pub templates: TemplatePools,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            dialogues: 500,
            professional_turns: Range::new(3, 6),
            sentences_per_turn: Range::new(1, 4),
            patient_sentences: Range::new(1, 2),
            mixing_probability: 0.35,
            mixed_share: 0.5,
            partner_probability: 0.8,
            summary_keyword_probability: 0.3,
            shared_probability: 0.0,
            distribution: SectionDistribution::clinical(),
            templates: TemplatePools::default(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let dist = self.distribution.as_array();
        if dist.iter().any(|p| !(0.0..=1.0).contains(p)) || (dist.iter().sum::<f64>() - 1.0).abs() > 5e-3 {
            return Err(Error::Config(format!("section distribution {dist:?} must be non-negative and sum to 1 (within 0.005)")));
        }
        for r in [&self.professional_turns, &self.sentences_per_turn, &self.patient_sentences] {
            if r.min == 0 || r.min > r.max {
                return Err(Error::Config(format!("invalid range {}..={}", r.min, r.max)));
            }
        }
        for p in [
            self.mixing_probability,
            self.mixed_share,
            self.partner_probability,
            self.summary_keyword_probability,
            self.shared_probability,
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("probability {p} outside [0, 1]")));
            }
        }
        for l in SectionLabel::ALL {
            if self.distribution.get(l) > 0.0 && self.templates.for_section(l).is_empty() {
                return Err(Error::Config(format!("empty template pool for requested section `{l}`")));
            }
        }
        if self.distribution.summarization > 0.0
            && self.summary_keyword_probability > 0.0
            && self.templates.summary_openers.is_empty()
        {
            return Err(Error::Config("empty summary opener pool".into()));
        }
        for p in &self.templates.shared {
            if p.sections.len() < 2 || p.templates.is_empty() {
                return Err(Error::Config("a shared pool needs two sections and at least one template".into()));
            }
        }
        if self.templates.patient.is_empty() {
            return Err(Error::Config("empty patient template pool".into()));
        }
        let all = SectionLabel::ALL
            .iter()
            .flat_map(|&l| self.templates.for_section(l))
            .chain(&self.templates.summary_openers)
            .chain(&self.templates.patient)
            .chain(self.templates.shared.iter().flat_map(|p| &p.templates));
        for t in all {
            for slot in slot_names(t) {
                let base = slot_base(&slot);
                if !self.templates.slots.contains_key(&base) {
                    return Err(Error::Config(format!("template `{t}` uses unknown slot `{slot}`")));
                }
            }
        }
        Ok(())
    }
}

fn slot_names(template: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else { break };
        out.push(rest[open + 1..open + close].to_string());
        rest = &rest[open + close + 1..];
    }
    out
}

fn slot_base(slot: &str) -> String {
    slot.trim_end_matches(|c: char| c.is_ascii_digit()).to_lowercase()
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn fill(template: &str, slots: &BTreeMap<String, Vec<String>>, rng: &mut ChaCha8Rng) -> String {
    let mut out = String::with_capacity(template.len() + 16);
    let mut used: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        let Some(close) = rest[open..].find('}') else { break };
        out.push_str(&rest[..open]);
        let name = &rest[open + 1..open + close];
        let base = slot_base(name);
        let pool = &slots[&base];
        let taken = used.entry(base).or_default();
        let choices: Vec<usize> = (0..pool.len()).filter(|i| !taken.contains(i)).collect();
        let pick = if choices.is_empty() {
            rng.random_range(0..pool.len())
        } else {
            choices[rng.random_range(0..choices.len())]
        };
        taken.push(pick);
        let value = &pool[pick];
        if name.starts_with(|c: char| c.is_uppercase()) {
            out.push_str(&capitalize(value));
        } else {
            out.push_str(value);
        }
        rest = &rest[open + close + 1..];
    }
    out.push_str(rest);
    out
}

fn partner(l: SectionLabel) -> Option<SectionLabel> {
    match l {
        SectionLabel::HistoryTaking => Some(SectionLabel::Summarization),
        SectionLabel::Summarization => Some(SectionLabel::HistoryTaking),
        SectionLabel::Education => Some(SectionLabel::CarePlan),
        SectionLabel::CarePlan => Some(SectionLabel::Education),
        SectionLabel::Other => None,
    }
}

fn draw_section(dist: &[f64; SectionLabel::COUNT], rng: &mut ChaCha8Rng) -> SectionLabel {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for l in SectionLabel::ALL {
        acc += dist[l.index()];
        if u < acc {
            return l;
        }
    }
    SectionLabel::ALL
        .into_iter()
        .rev()
        .find(|l| dist[l.index()] > 0.0)
        .unwrap_or(SectionLabel::Other)
}

/// Largest-remainder allocation of `total` items to sections.
fn quota(dist: &[f64; SectionLabel::COUNT], total: usize) -> Vec<SectionLabel> {
    let raw: Vec<f64> = dist.iter().map(|p| p * total as f64).collect();
    let mut counts: Vec<usize> = raw.iter().map(|r| r.floor() as usize).collect();
    let mut order: Vec<usize> = (0..SectionLabel::COUNT).collect();
    order.sort_by(|&a, &b| {
        (raw[b] - raw[b].floor())
            .partial_cmp(&(raw[a] - raw[a].floor()))
            .unwrap()
            .then(a.cmp(&b))
    });
    let mut missing = total - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if missing == 0 {
            break;
        }
        if dist[i] > 0.0 {
            counts[i] += 1;
            missing -= 1;
        }
    }
    SectionLabel::ALL
        .iter()
        .flat_map(|&l| std::iter::repeat_n(l, counts[l.index()]))
        .collect()
}

/// Generates a corpus with gold labels for every professional sentence.
///
/// Section shares follow `config.distribution`: leading sections of
/// professional turns are allocated by quota, and mixed-in sentences are drawn
/// from the same distribution, so the sentence marginal matches in
/// expectation. The output is a pure function of `(config, seed)`.
pub fn generate_synthetic_corpus(config: &SynthConfig, seed: u64) -> Result<(Corpus, GroundTruth)> {
    config.validate()?;
    let mut rng = seeds::rng(seeds::derive(seed, "synth", 0));
    let dist = config.distribution.normalized();
    let tpl = &config.templates;

    let turn_counts: Vec<usize> = (0..config.dialogues)
        .map(|_| config.professional_turns.sample(&mut rng))
        .collect();
    let mut leads = quota(&dist, turn_counts.iter().sum());
    leads.shuffle(&mut rng);
    let mut leads = leads.into_iter();

    let width = config.dialogues.max(1).to_string().len().max(5);
    let mut dialogues = Vec::with_capacity(config.dialogues);
    let mut gold = GroundTruth::new();
    for (di, &n_prof) in turn_counts.iter().enumerate() {
        let id = format!("syn-{di:0width$}");
        let mut turns = Vec::with_capacity(2 * n_prof);
        for _ in 0..n_prof {
            let n_pat = config.patient_sentences.sample(&mut rng);
            let patient: Vec<String> = (0..n_pat)
                .map(|_| {
                    let t = &tpl.patient[rng.random_range(0..tpl.patient.len())];
                    fill(t, &tpl.slots, &mut rng)
                })
                .collect();
            turns.push(Turn::new(turns.len(), SpeakerRole::Patient, patient));

            let lead = leads.next().expect("quota covers every professional turn");
            let n = config.sentences_per_turn.sample(&mut rng);
            let second = if n > 1 && rng.random_bool(config.mixing_probability) {
                match partner(lead) {
                    Some(p) if rng.random_bool(config.partner_probability) => Some(p),
                    _ => Some(draw_section(&dist, &mut rng)),
                }
            } else {
                None
            };
            let turn_index = turns.len();
            let mut texts = Vec::with_capacity(n);
            for si in 0..n {
                let section = match second {
                    Some(s) if si > 0 && rng.random_bool(config.mixed_share) => s,
                    _ => lead,
                };
                let opener = section == SectionLabel::Summarization
                    && section == lead
                    && si == 0
                    && !tpl.summary_openers.is_empty()
                    && rng.random_bool(config.summary_keyword_probability);
                let shared = if opener { Vec::new() } else { tpl.shared_for(section) };
                let t = if opener {
                    &tpl.summary_openers[rng.random_range(0..tpl.summary_openers.len())]
                } else if !shared.is_empty() && rng.random_bool(config.shared_probability) {
                    shared[rng.random_range(0..shared.len())]
                } else {
                    let pool = tpl.for_section(section);
                    &pool[rng.random_range(0..pool.len())]
                };
                texts.push(fill(t, &tpl.slots, &mut rng));
                gold.insert(SentenceRef::new(id.clone(), turn_index, si), section);
            }
            turns.push(Turn::new(turn_index, SpeakerRole::Professional, texts));
        }
        dialogues.push(Dialogue { id, turns });
    }
    Ok((Corpus::new(dialogues)?, gold))
}
