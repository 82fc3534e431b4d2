use std::collections::BTreeMap;

use async_trait::async_trait;
use sha2::{Digest, Sha256};

use super::backend::{Backend, BackendError, ChatRequest, ImagePayload, ImageRequest};
use crate::prompt::{self, PromptVersionId};
use crate::request::{DEFAULT_IMAGE_SPECS, DEFAULT_WORDS_LENGTH};
use crate::story::{serialize_book, CharacterProfile, StoryBook};

/// A 1x1 PNG returned for every synthetic image.
pub const PLACEHOLDER_PNG: &[u8] = &[
    0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a, 0x00, 0x00, 0x00, 0x0d, 0x49, 0x48, 0x44, 0x52,
    0x00, 0x00, 0x00, 0x01, 0x00, 0x00, 0x00, 0x01, 0x08, 0x02, 0x00, 0x00, 0x00, 0x90, 0x77, 0x53,
    0xde, 0x00, 0x00, 0x00, 0x0c, 0x49, 0x44, 0x41, 0x54, 0x78, 0xda, 0x63, 0xf8, 0x7f, 0xa2, 0x02,
    0x00, 0x05, 0x09, 0x02, 0x40, 0x06, 0x9d, 0x77, 0x14, 0x00, 0x00, 0x00, 0x00, 0x49, 0x45, 0x4e,
    0x44, 0xae, 0x42, 0x60, 0x82,
];

const BOY_NAMES: &[&str] = &["Theo", "Nico", "Leo", "Milo", "Jonas"];
const GIRL_NAMES: &[&str] = &["Lina", "Mira", "Ava", "Elena", "Zoe"];
const CHILD_NAMES: &[&str] = &["Robin", "Sky", "Alex", "Kai", "Remy"];
const FRIEND_NAMES: &[&str] = &["Pip", "Bruno", "Zuzu", "Tiko", "Moss"];

const ENGLISH: &[&str] = &[
    "Once upon a time, {hero} lived in a small village at the edge of a green valley.",
    "More than anything, {hero} loved {theme}, and dreamed about them every night.",
    "One bright morning, {hero} met {friend}, who smiled and said hello in a soft and friendly voice.",
    "Together they found a path full of {ingredient} surprises that sparkled in the sunlight.",
    "{friend} showed {hero} how to listen to the wind, and the wind sang a gentle song.",
    "When the path became steep, {hero} held the hand of {friend} and they climbed slowly and bravely.",
    "At the top of the hill they saw a lost little bird that could not find its nest.",
    "{hero} remembered that kindness is the best kind of magic, so they helped the bird fly home.",
    "The bird thanked them with a happy tune, and the whole valley seemed to glow.",
    "On the way back, {friend} told {hero} a story about the stars and the moon.",
    "Every step of the journey made their friendship stronger and warmer.",
    "In the evening, {hero} returned home, tired and happy, with a heart full of joy.",
];

const GREEK: &[&str] = &[
    "Μια φορά κι έναν καιρό, ο {hero} ζούσε σε ένα μικρό χωριό δίπλα σε μια πράσινη κοιλάδα.",
    "Πιο πολύ από όλα, ο {hero} αγαπούσε {theme} και τα ονειρευόταν κάθε βράδυ.",
    "Ένα φωτεινό πρωί, ο {hero} γνώρισε τον {friend}, που χαμογέλασε και τον χαιρέτησε γλυκά.",
    "Μαζί βρήκαν ένα μονοπάτι γεμάτο {ingredient} εκπλήξεις που έλαμπαν στον ήλιο.",
    "Ο {friend} έδειξε στον {hero} πώς να ακούει τον άνεμο, και ο άνεμος τραγούδησε ένα απαλό τραγούδι.",
    "Στην κορυφή του λόφου είδαν ένα χαμένο πουλάκι που δεν έβρισκε τη φωλιά του.",
    "Ο {hero} θυμήθηκε ότι η καλοσύνη είναι η πιο όμορφη μαγεία και βοήθησε το πουλάκι να γυρίσει σπίτι.",
    "Το βράδυ, ο {hero} γύρισε σπίτι κουρασμένος και χαρούμενος, με την καρδιά γεμάτη χαρά.",
];

/// Offline stand-in for a real model. Answers P5 prompts with a well-formed
/// book built from the variables it reads back out of the prompt, and every
/// image request with [`PLACEHOLDER_PNG`]. Output depends only on the
/// prompt with its nonce removed.
#[derive(Debug, Default, Clone)]
pub struct SyntheticBackend;

impl SyntheticBackend {
    pub fn new() -> Self {
        Self
    }

    pub fn book_for_prompt(prompt_text: &str) -> StoryBook {
        let vars = prompt::version(PromptVersionId::P5)
            .extract(prompt_text)
            .unwrap_or_default();
        let get = |k: &str, default: &str| vars.get(k).cloned().unwrap_or_else(|| default.to_string());
        let style = get("style", "watercolor");
        let specs = get("image_specs", DEFAULT_IMAGE_SPECS);
        let theme = get("element_1", "friendship").to_lowercase();
        let ingredient = get("element_2", "magical").to_lowercase();
        let gender = get("gender", "child");
        let age = get("age", "6");
        let language = get("language", "English");
        let words: usize = vars
            .get("words_length")
            .and_then(|w| w.parse().ok())
            .unwrap_or(DEFAULT_WORDS_LENGTH as usize);

        let digest = Sha256::digest(prompt::normalize_nonce(prompt_text).as_bytes());
        let pick = |list: &[&'static str], byte: usize| list[digest[byte] as usize % list.len()];
        let hero = pick(
            match gender.as_str() {
                "boy" => BOY_NAMES,
                "girl" => GIRL_NAMES,
                _ => CHILD_NAMES,
            },
            0,
        );
        let friend = pick(FRIEND_NAMES, 1);

        let bank = if language == "Greek" { GREEK } else { ENGLISH };
        let mut story = String::new();
        let mut count = 0;
        let mut i = 0;
        while count < words {
            let sentence = bank[i % bank.len()]
                .replace("{hero}", hero)
                .replace("{friend}", friend)
                .replace("{theme}", &theme)
                .replace("{ingredient}", &ingredient);
            count += sentence.split_whitespace().count();
            if !story.is_empty() {
                story.push(if i % 4 == 0 { '\n' } else { ' ' });
            }
            story.push_str(&sentence);
            i += 1;
        }

        let setting = "in a green valley with rolling hills, tall oak trees, a winding dirt path, wildflowers in yellow and purple, a small stone bridge over a clear stream and fluffy white clouds in a bright blue sky";
        let scene = |action: &str, extras: &str| {
            format!("{style} render of {hero} and {friend} {action} and {setting}, {extras}, {specs}")
        };
        let mut scenes = BTreeMap::new();
        scenes.insert(
            "Image1".to_string(),
            scene(
                &format!("meeting for the first time and smiling, standing side by side near a toy made of {theme}"),
                "a small brown rabbit watching from the grass",
            ),
        );
        scenes.insert(
            "Image2".to_string(),
            scene(
                &format!("walking hand in hand along a path full of {ingredient} sparkles"),
                "two blue butterflies flying above them",
            ),
        );
        scenes.insert(
            "Image3".to_string(),
            scene(
                "climbing a hill together and looking at a little lost bird on a branch",
                "a family of ducks swimming in the stream",
            ),
        );
        scenes.insert(
            "Image4".to_string(),
            scene(
                "waving goodbye to the happy bird as it flies to its nest at sunset",
                "a warm orange sun setting behind the hills",
            ),
        );

        StoryBook {
            title: format!("{hero} and {friend}"),
            characters: vec![
                CharacterProfile {
                    name: hero.to_string(),
                    appearance: format!(
                        "a cheerful {age} year old {gender} with short brown hair, round rosy cheeks and big curious eyes, wearing a yellow raincoat, blue trousers and red boots, human, drawn in {style} style"
                    ),
                },
                CharacterProfile {
                    name: friend.to_string(),
                    appearance: format!(
                        "a small friendly fox with soft orange fur, a white tipped tail, bright green eyes and a tiny blue scarf, walking on four legs, animal, gentle and playful, drawn in {style} style"
                    ),
                },
            ],
            story,
            image_descriptions: scenes,
            book_cover_description: format!(
                "{style} render of {hero} and {friend} sitting together under a big oak tree {setting}, {specs}"
            ),
        }
    }
}

#[async_trait]
impl Backend for SyntheticBackend {
    fn id(&self) -> String {
        "mock".to_string()
    }

    async fn chat(&self, req: &ChatRequest) -> Result<String, BackendError> {
        Ok(serialize_book(&Self::book_for_prompt(&req.prompt)))
    }

    async fn image(&self, _req: &ImageRequest) -> Result<ImagePayload, BackendError> {
        Ok(ImagePayload::Bytes {
            data: PLACEHOLDER_PNG.to_vec(),
            media_type: "image/png".to_string(),
        })
    }

    async fn download(&self, url: &str) -> Result<(Vec<u8>, String), BackendError> {
        Err(BackendError::Protocol(format!(
            "synthetic backend never serves URLs ({url})"
        )))
    }
}
