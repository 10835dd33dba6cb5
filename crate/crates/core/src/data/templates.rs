//! Question/answer templates and the shipped text corpus.

use crate::data::caption::{phrase, LEVEL_WORDS, NEUTRAL_CAPTION, PROTOTYPES};
use crate::data::observe::{Attribute, Placement, SizeLabel};
use crate::data::prior::ARTICULATIONS;

pub const POSE_PLACEHOLDER: &str = "<POSE>";
pub const OBS_PLACEHOLDER: &str = "<OBS>";
pub const DESCRIPTION_SLOT: &str = "{description}";

/// Template sets used by the record builder. Every list must be nonempty.
#[derive(Clone, Debug, PartialEq)]
pub struct Templates {
    pub text_questions: Vec<String>,
    pub obs_questions: Vec<String>,
    pub implicit_questions: Vec<String>,
    pub scene_questions: Vec<String>,
    pub pose_answers: Vec<String>,
}

fn owned(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Default for Templates {
    fn default() -> Self {
        Templates {
            text_questions: owned(&[
                "{description}, can you give the SMPL pose of this person?",
                "I have a word description of a person's pose, can you give the SMPL pose of this person? {description}.",
                "There is a person: {description}. Please output this person's SMPL pose.",
                "{description}. Give the SMPL pose.",
                "What's the SMPL pose of this person? {description}.",
                "Use SMPL pose to describe this person's behavior. {description}.",
                "There is a person doing this: {description}. Can you use SMPL pose to describe the pose?",
                "A person is described as: {description}. Use the SMPL pose to reflect this.",
                "Human pose is described as words: {description}. The SMPL pose is?",
                "Human pose can be described as words: {description}. And it can also be described in SMPL pose format, can you output this?",
            ]),
            obs_questions: owned(&[
                "<OBS> Can you predict the SMPL pose of the person in this image?",
                "<OBS> There is a person in the middle of the image, please output this person's SMPL pose.",
                "<OBS> What is the human pose in this image? Please respond with SMPL pose.",
                "<OBS> What is the person doing in this image? Please output SMPL pose.",
                "<OBS> There is a person in the middle of the image, use SMPL to describe the pose.",
                "<OBS> Can you provide the SMPL pose of the person in the center of this image?",
            ]),
            implicit_questions: owned(&["{description}, can you give the SMPL pose of this person?"]),
            scene_questions: owned(&["<OBS> {description}, can you give the SMPL pose of this person?"]),
            pose_answers: owned(&[
                "The SMPL pose is <POSE>.",
                "It is <POSE>.",
                "The SMPL format of this person's pose is <POSE>.",
                "Sure, it is <POSE>.",
                "Sure, the SMPL pose is <POSE>.",
                "<POSE>.",
                "The SMPL pose of the person is <POSE>.",
                "Sure, <POSE>.",
            ]),
        }
    }
}

impl Templates {
    pub fn is_complete(&self) -> bool {
        !(self.text_questions.is_empty()
            || self.obs_questions.is_empty()
            || self.implicit_questions.is_empty()
            || self.scene_questions.is_empty()
            || self.pose_answers.is_empty())
    }
}

const NUMBERS: [&str; 19] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten",
    "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen",
];

const FACTS: [(&str, &str); 24] = [
    ("What color is the sky on a clear day?", "The sky is blue."),
    ("What color is fresh grass?", "Fresh grass is green."),
    ("What color is snow?", "Snow is white."),
    ("What is the opposite of left?", "The opposite of left is right."),
    ("What is the opposite of right?", "The opposite of right is left."),
    ("What is the opposite of up?", "The opposite of up is down."),
    ("What is the opposite of tall?", "The opposite of tall is short."),
    ("Which joint connects the upper arm and the forearm?", "The elbow connects them."),
    ("Which joint connects the thigh and the shin?", "The knee connects them."),
    ("Which joint connects the arm to the body?", "The shoulder connects the arm to the body."),
    ("Which joint connects the leg to the body?", "The hip connects the leg to the body."),
    ("How many joints does the body model have?", "The body model has twenty four joints."),
    ("How many arms does a person have?", "A person has two arms."),
    ("How many legs does a person have?", "A person has two legs."),
    ("What do people use to sit?", "People sit on a chair."),
    ("What do people kick in soccer?", "People kick a ball."),
    ("What do you do when you greet a friend from far away?", "You wave hello."),
    ("Is running faster than walking?", "Yes, running is faster than walking."),
    ("Is sitting more restful than squatting?", "Yes, sitting is more restful."),
    ("What part of the body bends when you squat?", "The knees and the hips bend."),
    ("Where is the head?", "The head is on top of the neck."),
    ("What is in the center of the body?", "The pelvis is in the center of the body."),
    ("Can you describe a pose in words?", "Yes, a pose can be described in words."),
    ("Hello, who are you?", "I am an assistant that can talk about human poses."),
];

/// Generic text question/answer pairs for instruction-following data.
pub fn vqa_pairs() -> Vec<(String, String)> {
    let mut pairs: Vec<(String, String)> = FACTS
        .iter()
        .map(|(q, a)| (q.to_string(), a.to_string()))
        .collect();
    for a in 0..10 {
        for b in 0..9 {
            pairs.push((
                format!("What is {} plus {}?", NUMBERS[a], NUMBERS[b]),
                format!("{} plus {} is {}.", NUMBERS[a], NUMBERS[b], NUMBERS[a + b]),
            ));
        }
    }
    for a in 1..10 {
        for b in 0..a {
            pairs.push((
                format!("What is {} minus {}?", NUMBERS[a], NUMBERS[b]),
                format!("{} minus {} is {}.", NUMBERS[a], NUMBERS[b], NUMBERS[a - b]),
            ));
        }
    }
    for a in 1..=4 {
        for b in 1..=4 {
            pairs.push((
                format!("What is {} times {}?", NUMBERS[a], NUMBERS[b]),
                format!("{} times {} is {}.", NUMBERS[a], NUMBERS[b], NUMBERS[a * b]),
            ));
        }
    }
    for a in 0..18 {
        pairs.push((
            format!("What number comes after {}?", NUMBERS[a]),
            format!("{} comes after {}.", NUMBERS[a + 1], NUMBERS[a]),
        ));
    }
    pairs
}

/// Every template, phrase, activity sentence and QA pair the generators can
/// emit, one text per line. Vocabularies are built from this corpus.
pub fn shipped_corpus() -> Vec<String> {
    let t = Templates::default();
    let mut corpus: Vec<String> = t
        .text_questions
        .iter()
        .chain(&t.obs_questions)
        .chain(&t.implicit_questions)
        .chain(&t.scene_questions)
        .chain(&t.pose_answers)
        .map(|q| q.replace(DESCRIPTION_SLOT, ""))
        .collect();
    corpus.push(NEUTRAL_CAPTION.to_string());
    for i in 0..ARTICULATIONS.len() {
        for level in 1..=LEVEL_WORDS.len() {
            corpus.push(phrase(i, level));
        }
    }
    for (i, p) in PROTOTYPES.iter().enumerate() {
        corpus.push(p.sentence.to_string());
        corpus.push(Attribute::Activity(i).query_text());
    }
    for p in Placement::ALL {
        corpus.push(Attribute::Placement(p).query_text());
    }
    for s in SizeLabel::ALL {
        corpus.push(Attribute::Size(s).query_text());
    }
    for (q, a) in vqa_pairs() {
        corpus.push(q);
        corpus.push(a);
    }
    corpus
}
