//! ICL context rendering.
//!
//! The shipped template files contain two literal example blocks
//! (`{ICL_Prompt_1}`..., `{ICL_Prompt_2}`...). They are split into a header,
//! one repeatable example block and a footer; rendering repeats the block
//! once per example.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const WIN_AND_LOSE_TEMPLATE: &str = include_str!("../../assets/templates/win_and_lose.txt");
pub const WIN_ONLY_TEMPLATE: &str = include_str!("../../assets/templates/win_only.txt");

const PROMPT: &str = "{ICL_Prompt_1}";
const LIKED: &str = "{Prompt_1_Liked_Response}";
const DISLIKED: &str = "{Prompt_1_Disliked_Response}";
const TEST: &str = "{Test_prompt}";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IclExample {
    pub prompt: String,
    pub liked: Option<String>,
    pub disliked: Option<String>,
    /// A losing response presented under the liked label.
    #[serde(default)]
    pub label_flip: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IclVariant {
    WinAndLose,
    WinOnly,
    LoseOnly,
    LoseMislabeled,
}

impl IclVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            IclVariant::WinAndLose => "win_and_lose",
            IclVariant::WinOnly => "win_only",
            IclVariant::LoseOnly => "lose_only",
            IclVariant::LoseMislabeled => "lose_mislabeled",
        }
    }

    /// Builds the example for one history entry under this variant.
    pub fn example(self, prompt: &str, winner: &str, loser: &str) -> IclExample {
        let (liked, disliked, label_flip) = match self {
            IclVariant::WinAndLose => (Some(winner), Some(loser), false),
            IclVariant::WinOnly => (Some(winner), None, false),
            IclVariant::LoseOnly => (None, Some(loser), false),
            IclVariant::LoseMislabeled => (Some(loser), None, true),
        };
        IclExample {
            prompt: prompt.to_string(),
            liked: liked.map(str::to_string),
            disliked: disliked.map(str::to_string),
            label_flip,
        }
    }
}

impl std::str::FromStr for IclVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "win_and_lose" => Ok(IclVariant::WinAndLose),
            "win_only" => Ok(IclVariant::WinOnly),
            "lose_only" => Ok(IclVariant::LoseOnly),
            "lose_mislabeled" => Ok(IclVariant::LoseMislabeled),
            other => Err(Error::InvalidArgument(format!("unknown ICL variant `{other}`"))),
        }
    }
}

#[derive(Debug)]
struct Template {
    header: String,
    block: String,
    footer: String,
}

impl Template {
    fn parse(src: &str) -> Template {
        let first = src.find("User: {ICL_Prompt_1}").expect("template lacks first example");
        let second = src.find("User: {ICL_Prompt_2}").expect("template lacks second example");
        let block = &src[first..second];
        let block2 = block.replace("_1", "_2");
        assert_eq!(&src[second..second + block2.len()], block2, "example blocks differ");
        Template {
            header: src[..first].to_string(),
            block: block.to_string(),
            footer: src[second + block2.len()..].to_string(),
        }
    }

    /// Same template with every line containing `placeholder` removed from the block.
    fn without_line(&self, placeholder: &str) -> Template {
        let block = self
            .block
            .split_inclusive('\n')
            .filter(|l| !l.contains(placeholder))
            .collect();
        Template {
            header: self.header.clone(),
            block,
            footer: self.footer.clone(),
        }
    }
}

fn win_and_lose() -> &'static Template {
    static T: OnceLock<Template> = OnceLock::new();
    T.get_or_init(|| Template::parse(WIN_AND_LOSE_TEMPLATE))
}

fn win_only() -> &'static Template {
    static T: OnceLock<Template> = OnceLock::new();
    T.get_or_init(|| Template::parse(WIN_ONLY_TEMPLATE))
}

fn lose_only() -> &'static Template {
    static T: OnceLock<Template> = OnceLock::new();
    T.get_or_init(|| win_and_lose().without_line(LIKED))
}

/// Single left-to-right pass, so placeholder-like text inside values is
/// never substituted again.
fn fill(piece: &str, values: &[(&str, &str)], out: &mut String) {
    let mut rest = piece;
    loop {
        let next = values
            .iter()
            .filter_map(|(k, v)| rest.find(k).map(|i| (i, *k, *v)))
            .min_by_key(|(i, _, _)| *i);
        match next {
            Some((i, k, v)) => {
                out.push_str(&rest[..i]);
                out.push_str(v);
                rest = &rest[i + k.len()..];
            }
            None => {
                out.push_str(rest);
                return;
            }
        }
    }
}

/// The zero-shot form: no instructions, no examples.
pub fn render_zero_shot(test_prompt: &str) -> String {
    format!("User: {test_prompt}\nResponse:")
}

/// Renders `examples` (in order) and the test prompt under `variant`.
/// An empty example list yields the zero-shot form.
pub fn render(variant: IclVariant, examples: &[IclExample], test_prompt: &str) -> Result<String> {
    if examples.is_empty() {
        return Ok(render_zero_shot(test_prompt));
    }
    let template = match variant {
        IclVariant::WinAndLose => win_and_lose(),
        IclVariant::WinOnly | IclVariant::LoseMislabeled => win_only(),
        IclVariant::LoseOnly => lose_only(),
    };
    let mut out = template.header.clone();
    for (i, ex) in examples.iter().enumerate() {
        let need = |v: &Option<String>, label: &str| {
            v.clone().ok_or_else(|| {
                Error::InvalidArgument(format!("example {i} lacks a {label} response for {}", variant.as_str()))
            })
        };
        let liked = match variant {
            IclVariant::LoseOnly => String::new(),
            _ => need(&ex.liked, "liked")?,
        };
        let disliked = match variant {
            IclVariant::WinAndLose | IclVariant::LoseOnly => need(&ex.disliked, "disliked")?,
            _ => String::new(),
        };
        fill(
            &template.block,
            &[(PROMPT, &ex.prompt), (LIKED, &liked), (DISLIKED, &disliked)],
            &mut out,
        );
    }
    fill(&template.footer, &[(TEST, test_prompt)], &mut out);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn templates_split_cleanly() {
        let t = win_only();
        assert!(t.header.starts_with("Below are some examples"));
        assert_eq!(
            t.block,
            "User: {ICL_Prompt_1}\nLiked Response: {Prompt_1_Liked_Response}\n\n"
        );
        assert!(t.footer.ends_with("User: {Test_prompt}\nResponse: "));
        let t = win_and_lose();
        assert!(t.block.contains(DISLIKED));
    }

    #[test]
    fn zero_examples_is_bare_form() {
        assert_eq!(render(IclVariant::WinOnly, &[], "hi").unwrap(), "User: hi\nResponse:");
    }

    #[test]
    fn lose_only_uses_disliked_label() {
        let ex = IclVariant::LoseOnly.example("p", "W", "L");
        let s = render(IclVariant::LoseOnly, &[ex], "t").unwrap();
        assert!(s.contains("User: p\nDisliked Response: L\n\n"));
        assert!(!s.contains("Liked Response: W"));
    }

    #[test]
    fn values_are_not_resubstituted() {
        let ex = IclVariant::WinOnly.example("{Test_prompt}", "{ICL_Prompt_1}", "x");
        let s = render(IclVariant::WinOnly, &[ex], "T").unwrap();
        assert!(s.contains("User: {Test_prompt}\nLiked Response: {ICL_Prompt_1}\n"));
    }

    #[test]
    fn missing_disliked_is_an_error() {
        let ex = IclVariant::WinOnly.example("p", "w", "l");
        assert!(render(IclVariant::WinAndLose, &[ex], "t").is_err());
    }
}
