use std::path::Path;
use std::time::Duration;

use serde_json::Value;

use super::{io_err, title_from_filename, KbError, WikiPage};
use crate::util::sha256_hex;

fn is_redirect_text(body: &str) -> bool {
    body.trim_start().get(..9).is_some_and(|h| h.eq_ignore_ascii_case("#redirect"))
}

/// Pages from a directory: `*.json` files holding a page object, or
/// `*.txt` / `*.wiki` files whose percent-encoded stem is the title. Text
/// pages starting with `#REDIRECT` are flagged as redirects.
pub fn read_source_dir(dir: &Path) -> Result<Vec<WikiPage>, KbError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(dir)))
        .collect::<Result<_, _>>()?;
    paths.sort();
    let mut pages = Vec::new();
    for path in paths {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or_default();
        match ext {
            "json" if name != "manifest.json" => {
                let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
                let page: WikiPage = serde_json::from_str(&text)
                    .map_err(|e| KbError::Malformed { path: path.display().to_string(), message: e.to_string() })?;
                pages.push(page);
            }
            "txt" | "wiki" => {
                let body = std::fs::read_to_string(&path).map_err(io_err(&path))?;
                let stem = name.rsplit_once('.').map(|(s, _)| s).unwrap_or(&name);
                let title = title_from_filename(&format!("{stem}.json")).unwrap_or_else(|| stem.to_string());
                pages.push(WikiPage {
                    title,
                    is_redirect: is_redirect_text(&body),
                    revision: sha256_hex(body.as_bytes())[..12].to_string(),
                    body,
                });
            }
            _ => {}
        }
    }
    Ok(pages)
}

/// Reads pages from a MediaWiki `api.php` endpoint.
pub struct ApiSource {
    endpoint: String,
    agent: ureq::Agent,
}

impl ApiSource {
    pub fn new(endpoint: impl Into<String>) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(Duration::from_secs(30))).build().into();
        Self { endpoint: endpoint.into(), agent }
    }

    fn query(&self, params: &[(&str, &str)]) -> Result<Value, KbError> {
        let mut req = self.agent.get(&self.endpoint).query("action", "query").query("format", "json").query("formatversion", "2");
        for (k, v) in params {
            req = req.query(*k, *v);
        }
        let mut resp = req.call().map_err(|e| KbError::Api(e.to_string()))?;
        let body = resp.body_mut().read_to_string().map_err(|e| KbError::Api(e.to_string()))?;
        serde_json::from_str(&body).map_err(|e| KbError::Api(format!("reply is not JSON: {e}")))
    }

    /// Titles of non-redirect pages, following continuation, up to `limit`.
    pub fn list_titles(&self, limit: usize) -> Result<Vec<String>, KbError> {
        let mut titles = Vec::new();
        let mut cont: Option<String> = None;
        while titles.len() < limit {
            let mut params = vec![("list", "allpages"), ("apfilterredir", "nonredirects"), ("aplimit", "max")];
            if let Some(c) = &cont {
                params.push(("apcontinue", c.as_str()));
            }
            let v = self.query(&params)?;
            let batch = v
                .pointer("/query/allpages")
                .and_then(Value::as_array)
                .ok_or_else(|| KbError::Api("allpages reply without query.allpages".into()))?;
            titles.extend(batch.iter().filter_map(|p| p.get("title").and_then(Value::as_str)).map(str::to_string));
            cont = v.pointer("/continue/apcontinue").and_then(Value::as_str).map(str::to_string);
            if cont.is_none() {
                break;
            }
        }
        titles.truncate(limit);
        Ok(titles)
    }

    /// Current wikitext of the given titles, 50 per request.
    pub fn fetch_pages(&self, titles: &[String]) -> Result<Vec<WikiPage>, KbError> {
        let mut pages = Vec::new();
        for chunk in titles.chunks(50) {
            let joined = chunk.join("|");
            let v = self.query(&[("prop", "revisions"), ("rvprop", "content|ids"), ("rvslots", "main"), ("titles", &joined)])?;
            let list = v
                .pointer("/query/pages")
                .and_then(Value::as_array)
                .ok_or_else(|| KbError::Api("revisions reply without query.pages".into()))?;
            for p in list {
                if p.get("missing").is_some() {
                    continue;
                }
                let title = p.get("title").and_then(Value::as_str).unwrap_or_default().to_string();
                let rev = p.pointer("/revisions/0");
                let body = rev.and_then(|r| r.pointer("/slots/main/content")).and_then(Value::as_str).unwrap_or_default().to_string();
                let revision = rev.and_then(|r| r.get("revid")).map(|r| r.to_string()).unwrap_or_default();
                let is_redirect = p.get("redirect").and_then(Value::as_bool).unwrap_or(false) || is_redirect_text(&body);
                pages.push(WikiPage { title, body, is_redirect, revision });
            }
        }
        Ok(pages)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_pages_and_redirect_detection() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("Water.txt"), "Water is a fluid.").unwrap();
        std::fs::write(dir.path().join("H2O.wiki"), "#REDIRECT [[Water]]").unwrap();
        std::fs::write(dir.path().join("Java%20Edition%201.21.txt"), "A release.").unwrap();
        let pages = read_source_dir(dir.path()).unwrap();
        let titles: Vec<_> = pages.iter().map(|p| (p.title.as_str(), p.is_redirect)).collect();
        assert_eq!(titles, [("H2O", true), ("Java Edition 1.21", false), ("Water", false)]);
    }
}
