//! Item description prompts fed to the semantic embedder.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptTemplate {
    Beauty,
    Sports,
    Toys,
    Yelp,
    Ml1m,
}

const AMAZON_BODY: &str = " item has following attributes: \\n name is <TITLE>; brand is <BRAND>; price is <PRICE>. \\n The item has following features: <CATEGORIES>. \\n The item has following descriptions: <DESCRIPTION>.";

impl PromptTemplate {
    pub const ALL: [PromptTemplate; 5] =
        [PromptTemplate::Beauty, PromptTemplate::Sports, PromptTemplate::Toys, PromptTemplate::Yelp, PromptTemplate::Ml1m];

    pub fn name(self) -> &'static str {
        match self {
            PromptTemplate::Beauty => "beauty",
            PromptTemplate::Sports => "sports",
            PromptTemplate::Toys => "toys",
            PromptTemplate::Yelp => "yelp",
            PromptTemplate::Ml1m => "ml1m",
        }
    }

    /// Raw template text. `\n` is a literal backslash-n escape here and
    /// `<SLOT>` marks an attribute.
    pub fn raw(self) -> String {
        match self {
            PromptTemplate::Beauty => format!("The beauty{AMAZON_BODY}"),
            PromptTemplate::Sports => format!("The Sports and Outdoors{AMAZON_BODY}"),
            PromptTemplate::Toys => format!("The Toys & Games{AMAZON_BODY}"),
            PromptTemplate::Yelp => "The point of interest has the following attributes: \\n name is <NAME>; category is <CATEGORY>; type is <TYPE>; open status is <OPEN>; review count is <COUNT>; city is <CITY>; average score is <STARS>.".to_string(),
            PromptTemplate::Ml1m => "The movie item has following attributes: \\n Title: <TITLE> \\n Genres: <GENRES> \\n Year: <YEAR>".to_string(),
        }
    }

    pub fn slots(self) -> &'static [&'static str] {
        match self {
            PromptTemplate::Beauty | PromptTemplate::Sports | PromptTemplate::Toys => {
                &["TITLE", "BRAND", "PRICE", "CATEGORIES", "DESCRIPTION"]
            }
            PromptTemplate::Yelp => &["NAME", "CATEGORY", "TYPE", "OPEN", "COUNT", "CITY", "STARS"],
            PromptTemplate::Ml1m => &["TITLE", "GENRES", "YEAR"],
        }
    }
}

impl FromStr for PromptTemplate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let valid: Vec<&str> = Self::ALL.iter().map(|t| t.name()).collect();
                Error::Config(format!("unknown dataset kind `{s}`; valid kinds: {}", valid.join(", ")))
            })
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub item_index: usize,
    pub prompt: String,
}

/// Fills the template's slots from `attributes` (keys matched
/// case-insensitively). Absent or blank attributes render as `unknown`.
pub fn render_prompt(item_index: usize, attributes: &BTreeMap<String, String>, template: PromptTemplate) -> PromptRecord {
    let mut text = template.raw().replace("\\n", "\n");
    for slot in template.slots() {
        let value = attributes
            .iter()
            .find(|(k, _)| k.eq_ignore_ascii_case(slot))
            .map(|(_, v)| v.trim())
            .filter(|v| !v.is_empty())
            .unwrap_or("unknown");
        text = text.replace(&format!("<{slot}>"), value);
    }
    PromptRecord { item_index, prompt: text }
}

/// Reads item attributes from JSON-lines objects carrying an `item` key; all
/// other keys become attributes (non-string values are stringified).
pub fn load_attributes(path: &Path) -> Result<HashMap<String, BTreeMap<String, String>>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(&line).map_err(|e| Error::Parse { line: i + 1, message: e.to_string() })?;
        let mut item = None;
        let mut attrs = BTreeMap::new();
        for (k, v) in value {
            let s = match v {
                serde_json::Value::String(s) => s,
                serde_json::Value::Null => continue,
                other => other.to_string(),
            };
            if k == "item" {
                item = Some(s);
            } else {
                attrs.insert(k, s);
            }
        }
        let item = item.ok_or_else(|| Error::Parse { line: i + 1, message: "missing field item".into() })?;
        out.insert(item, attrs);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn attrs(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
    }

    #[test]
    fn movielens_prompt() {
        let a = attrs(&[("Title", "Toy Story"), ("Genres", "Animation"), ("Year", "1995")]);
        let rec = render_prompt(0, &a, PromptTemplate::Ml1m);
        assert_eq!(
            rec.prompt,
            "The movie item has following attributes: \n Title: Toy Story \n Genres: Animation \n Year: 1995"
        );
    }

    #[test]
    fn movielens_all_missing() {
        let rec = render_prompt(3, &BTreeMap::new(), PromptTemplate::Ml1m);
        assert_eq!(
            rec.prompt,
            "The movie item has following attributes: \n Title: unknown \n Genres: unknown \n Year: unknown"
        );
        assert_eq!(rec.item_index, 3);
    }

    #[test]
    fn beauty_full_expansion() {
        let a = attrs(&[
            ("title", "Rose Oil"),
            ("brand", "Acme"),
            ("price", "12.5"),
            ("categories", "Skin Care, Oils"),
            ("description", "Cold pressed."),
        ]);
        let expected = String::from("The beauty item has following attributes: ")
            + "\n"
            + " name is Rose Oil; brand is Acme; price is 12.5. "
            + "\n"
            + " The item has following features: Skin Care, Oils. "
            + "\n"
            + " The item has following descriptions: Cold pressed..";
        assert_eq!(render_prompt(1, &a, PromptTemplate::Beauty).prompt, expected);
    }

    #[test]
    fn toys_and_yelp_headers() {
        let toys = render_prompt(0, &BTreeMap::new(), PromptTemplate::Toys).prompt;
        assert!(toys.starts_with("The Toys & Games item has following attributes: \n name is unknown;"));
        let yelp = render_prompt(0, &attrs(&[("STARS", "4.5")]), PromptTemplate::Yelp).prompt;
        assert!(yelp.ends_with("average score is 4.5."));
        assert_eq!(yelp.matches("unknown").count(), 6);
    }

    #[test]
    fn unknown_kind_lists_valid() {
        let err = "netflix".parse::<PromptTemplate>().unwrap_err().to_string();
        assert!(err.contains("beauty, sports, toys, yelp, ml1m"), "{err}");
    }
}
