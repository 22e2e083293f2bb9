//! Prompt templates for question generation, answering, success
//! classification and rephrasing, plus the bundled in-context question bank.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{DialogTurn, YesNo};
use crate::error::{Error, Result};

/// Appended to the question-generation prompt for backends that cannot be
/// forced into yes/no decoding.
pub const GPT_COMPAT_VQG_SUFFIX: &str = "Generate an appropriate yes/no question.";

pub const ICL_RECENT_QUESTIONS: usize = 2;
pub const ICL_BANK_SIZE: usize = 20;
pub const ICL_QUESTIONS_PER_PROCEDURE: usize = 3;

fn vqg_header(procedure: &str) -> String {
    format!(
        "This is a photo of someone working on the procedure \"{procedure}\". \
I will ask a series of different yes/no questions to gather information about the state of the scene, \
then use it to determine whether the person has successfully completed the procedure. \
The goal is to extract as much relevant information as possible from the scene, so I will not repeat questions. \
I will try to ask short and simple questions about physical states and locations that are possible to observe from the photo."
    )
}

fn push_history(out: &mut String, history: &[DialogTurn]) {
    for turn in history {
        let _ = write!(out, "\nQ: {}\nA: {}", turn.question, turn.answer.value);
    }
}

/// Question-generation prompt: the task header, the raw dialog history (Unsure
/// answers included) and a trailing `Q:`.
pub fn build_vqg_prompt(procedure: &str, raw_history: &[DialogTurn], gpt_compat: bool) -> String {
    let mut out = vqg_header(procedure);
    if gpt_compat {
        out.push(' ');
        out.push_str(GPT_COMPAT_VQG_SUFFIX);
    }
    push_history(&mut out, raw_history);
    out.push_str("\nQ:");
    out
}

/// The success question asked after each iteration.
pub fn build_success_prompt(procedure: &str) -> String {
    format!(
        "Q: Based on the image and above information, has the procedure \"{procedure}\" been successfully completed? A:"
    )
}

/// Success classification input: task header and raw history, followed by
/// the success question. Never fed back into later prompts.
pub fn build_success_context(procedure: &str, raw_history: &[DialogTurn]) -> String {
    let mut out = vqg_header(procedure);
    push_history(&mut out, raw_history);
    out.push('\n');
    out.push_str(&build_success_prompt(procedure));
    out
}

/// Single-shot classification prompt used when no rationale is elicited.
pub fn build_rationale_free_prompt(procedure: &str) -> String {
    format!(
        "This is a photo of someone working on the procedure \"{procedure}\". \
Q: Based on the image, has the procedure \"{procedure}\" been successfully completed? A:"
    )
}

/// Question-answering prompt. The dialog history is deliberately absent.
pub fn build_vqa_prompt(question: &str, gpt_compat: bool) -> String {
    if gpt_compat {
        format!("Q: {question} (yes/no)\nA:")
    } else {
        format!("Q: {question}\nA:")
    }
}

/// Question/answer to statement demonstrations.
pub const REPHRASE_DEMONSTRATIONS: [(&str, YesNo, &str); 10] = [
    ("Is there a bowl on the table?", YesNo::Yes, "There is a bowl on the table."),
    ("Are the eggs cracked?", YesNo::No, "The eggs are not cracked."),
    ("Does the cardboard box look open?", YesNo::Yes, "The cardboard box looks open."),
    ("Are there any leaves outside of the basket?", YesNo::No, "There are not any leaves outside of the basket."),
    ("Is the orange peeled?", YesNo::Yes, "The orange is peeled."),
    ("Is the mug empty?", YesNo::No, "The mug is not empty."),
    ("Are there hedge trimmers in the image?", YesNo::Yes, "There are hedge trimmers in the image."),
    ("Has the light switch been turned on?", YesNo::No, "The light switch has not been turned on."),
    ("Does the table have any cups on it?", YesNo::Yes, "The table has cups on it."),
    ("Is the cabinet closed?", YesNo::No, "The cabinet is not closed."),
];

pub fn build_rephrase_prompt(question: &str, answer: YesNo) -> String {
    let mut out = String::from(
        "Rephrase each question and answer into a single declarative statement.\n",
    );
    for (q, a, s) in REPHRASE_DEMONSTRATIONS {
        let _ = write!(out, "\nQuestion: {q}\nAnswer: {a}\nStatement: {s}\n");
    }
    let _ = write!(out, "\nQuestion: {question}\nAnswer: {answer}\nStatement:");
    out
}

/// Rephrasing fallback when the backend produces no statement.
pub fn concat_question_answer(question: &str, answer: YesNo) -> String {
    format!("{} {}", question.trim(), answer)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IclEntry {
    pub procedure: String,
    pub questions: Vec<String>,
}

/// Human-written example procedures with three questions each.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IclBank {
    pub entries: Vec<IclEntry>,
}

const BUNDLED_ICL: [(&str, [&str; 3]); ICL_BANK_SIZE] = [
    ("Soak the sponge in a soapy water with your hands", ["Is there a sponge?", "Is the sponge in water?", "Is the water soapy?"]),
    ("Open the bottle", ["Is there a bottle in the image?", "Is the bottle open?", "Does the bottle have a lid on it?"]),
    ("Take the baking tray away from the table", ["Can you see a baking tray?", "Is the baking tray on the table?", "Is the baking tray picked up by someone?"]),
    ("Turn on a torch light", ["Is there a torch light in the photo?", "Is the torch light powered on?", "Is the torch light lit up?"]),
    ("Fold the right edge of the wrapper", ["Is there a wrapper in the image?", "Is the wrapper completely flat?", "Is the right edge of the wrapper folded?"]),
    ("Pour the water into the blue container", ["Do you see a blue container anywhere?", "Is there water in the blue container?", "Is the blue container empty?"]),
    ("Paint the patio with the paint brush", ["Is this a photo of a patio?", "Is the patio painted?", "Is someone holding a paint brush?"]),
    ("Spread the black peas on the salad with the spoon in your hand", ["Is there a salad?", "Are there black peas on the salad?", "Is there a spoon in someone's hand?"]),
    ("Scoop paint from the pallet on the table with the paint brush", ["Do you see a paint brush and a paint palette?", "Is there paint on the paint brush?", "Is the paint brush in someone's hand?"]),
    ("Wash the car with a sponge in your hand", ["Do you see a car?", "Is the car clean?", "Is the sponge being held?"]),
    ("Pick the scrubber from the sink", ["Do you see a scrubber somewhere?", "Is the scrubber in the sink?", "Is the scrubber in someone's hand?"]),
    ("Peel the onion", ["Is there an onion in the image?", "Is the onion's skin removed?", "Is the onion peeled?"]),
    ("Put the dirt in the dust bin", ["Is there a dust bin?", "Is there dirt in the dust bin?", "Is there any dirt outside of the dust bin?"]),
    ("Cut dough into two", ["Do you see any dough?", "Is the dough in two pieces?", "Is the dough whole?"]),
    ("Break the walnut with the nutcracker in your hand", ["Do you see a walnut?", "Is the walnut cracked?", "Is there a nut cracker in someone's hand?"]),
    ("Turn off the tap", ["Is there a tap in the photo?", "Is the water running?", "Is the faucet switched off?"]),
    ("Heat the edge of the bag with the lighter", ["Do you see a bag and a lighter?", "Is there a flame coming from the lighter?", "Is the lighter near the bag?"]),
    ("Close the fridge", ["Is there a fridge?", "Is the fridge open?", "Can you see inside the fridge?"]),
    ("Chop green beans with a knife on the chopping board", ["Do you see green beans on a cutting board?", "Are the green beans sliced?", "Is someone using a knife?"]),
    ("Drop the brush in your hand on the oven", ["Is there a brush in the scene?", "Is there an oven?", "Is the brush on the oven?"]),
];

impl IclBank {
    pub fn bundled() -> Self {
        Self {
            entries: BUNDLED_ICL
                .iter()
                .map(|(p, qs)| IclEntry {
                    procedure: (*p).into(),
                    questions: qs.iter().map(|q| (*q).into()).collect(),
                })
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.entries.len() != ICL_BANK_SIZE {
            return Err(Error::InvalidConfig(format!(
                "ICL bank must hold {ICL_BANK_SIZE} procedures, found {}",
                self.entries.len()
            )));
        }
        for e in &self.entries {
            if e.procedure.trim().is_empty() {
                return Err(Error::InvalidConfig("ICL bank entry with empty procedure".into()));
            }
            if e.questions.len() != ICL_QUESTIONS_PER_PROCEDURE {
                return Err(Error::InvalidConfig(format!(
                    "ICL procedure `{}` has {} questions, expected {ICL_QUESTIONS_PER_PROCEDURE}",
                    e.procedure,
                    e.questions.len()
                )));
            }
        }
        Ok(())
    }
}

/// In-context question generation prompt: the bank in a fresh random order,
/// the current procedure, and up to the two most recent asked questions.
pub fn build_icl_prompt<S, R>(procedure: &str, bank: &IclBank, recent_questions: &[S], rng: &mut R) -> String
where
    S: AsRef<str>,
    R: Rng + ?Sized,
{
    let mut order: Vec<&IclEntry> = bank.entries.iter().collect();
    order.shuffle(rng);

    let mut out = String::from(
        "Here are examples of short yes/no questions about physical states and locations \
that could be asked about a photo of someone working on a procedure.\n",
    );
    for entry in order {
        let _ = write!(out, "\nProcedure: \"{}\"", entry.procedure);
        for q in &entry.questions {
            let _ = write!(out, "\nQ: {q}");
        }
        out.push('\n');
    }
    let _ = write!(out, "\nProcedure: \"{procedure}\"");
    let skip = recent_questions.len().saturating_sub(ICL_RECENT_QUESTIONS);
    let recent = &recent_questions[skip..];
    if !recent.is_empty() {
        out.push_str("\nPrevious questions:");
        for q in recent {
            let _ = write!(out, "\nQ: {}", q.as_ref());
        }
    }
    out.push_str("\nQ:");
    out
}
