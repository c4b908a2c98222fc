//! Regenerates the bundled synthetic corpora and embedding file:
//!
//! ```text
//! cargo run -p pclc-core --example make_fixtures -- crates/core/fixtures
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use pclc_core::rng::{seeded, Rng};
use rand::seq::SliceRandom;
use rand::Rng as _;

const DIM: usize = 16;

/// Semantic clusters: every word of a cluster sits near its center.
const CLUSTERS: &[(&str, &[&str])] = &[
    ("place", &["city", "paris", "london", "tokyo", "berlin", "madrid", "rome", "dublin", "oslo", "lisbon", "vienna", "prague", "seattle", "boston", "york", "new", "san", "diego", "cairo", "lima"]),
    ("time", &["time", "range", "today", "tomorrow", "tonight", "monday", "friday", "weekend", "morning", "evening", "noon", "sunday", "later", "week", "next", "this"]),
    ("person", &["artist", "adele", "drake", "shakira", "eminem", "rihanna", "beyonce", "sting", "bjork", "prince", "madonna", "elvis", "cher"]),
    ("style", &["genre", "jazz", "rock", "pop", "blues", "metal", "funk", "soul", "disco", "reggae", "techno", "folk"]),
    ("food", &["cuisine", "sushi", "pizza", "tacos", "ramen", "curry", "pasta", "thai", "french", "korean", "greek", "vegan"]),
    ("count", &["party", "size", "number", "two", "three", "four", "five", "six", "seven", "eight", "ten"]),
    ("film", &["movie", "name", "inception", "avatar", "titanic", "jaws", "alien", "rocky", "heat", "up", "frozen", "coco", "gravity"]),
    ("sky", &["condition", "description", "sunny", "rainy", "snowy", "cloudy", "windy", "foggy", "stormy", "clear", "humid", "overcast"]),
    ("heat", &["temperature", "hot", "cold", "warm", "chilly", "freezing", "mild", "cool", "scorching", "frosty"]),
];

fn values() -> BTreeMap<&'static str, Vec<&'static str>> {
    BTreeMap::from([
        ("city", vec!["paris", "london", "tokyo", "berlin", "madrid", "rome", "dublin", "oslo", "lisbon", "vienna", "prague", "seattle", "boston", "new york", "san diego", "cairo", "lima"]),
        ("timeRange", vec!["today", "tomorrow", "tonight", "monday", "friday", "this weekend", "tomorrow morning", "sunday evening", "next week", "noon", "later"]),
        ("artist", vec!["adele", "drake", "shakira", "eminem", "rihanna", "beyonce", "sting", "bjork", "prince", "madonna", "elvis", "cher"]),
        ("genre", vec!["jazz", "rock", "pop", "blues", "metal", "funk", "soul", "disco", "reggae", "techno", "folk"]),
        ("cuisine", vec!["sushi", "pizza", "tacos", "ramen", "curry", "pasta", "thai", "french", "korean", "greek", "vegan"]),
        ("party_size_number", vec!["two", "three", "four", "five", "six", "seven", "eight", "ten"]),
        ("movie_name", vec!["inception", "avatar", "titanic", "jaws", "alien", "rocky", "heat", "up", "frozen", "coco", "gravity"]),
        ("condition_description", vec!["sunny", "rainy", "snowy", "cloudy", "windy", "foggy", "stormy", "clear", "humid", "overcast"]),
        ("condition_temperature", vec!["hot", "cold", "warm", "chilly", "freezing", "mild", "cool", "scorching", "frosty"]),
    ])
}

struct DomainSpec {
    name: &'static str,
    count: usize,
    templates: &'static [&'static str],
}

const SMOKE: &[DomainSpec] = &[
    DomainSpec {
        name: "PlayMusic",
        count: 35,
        templates: &[
            "play {genre} by {artist}",
            "play some {artist}",
            "put on {genre} music",
            "find {artist} concerts in {city} {timeRange}",
            "any {genre} shows in {city}",
            "play {artist} {timeRange}",
        ],
    },
    DomainSpec {
        name: "GetWeather",
        count: 15,
        templates: &[
            "will it be {condition_description} in {city} {timeRange}",
            "is it {condition_temperature} in {city}",
            "weather for {city} {timeRange}",
            "will it be {condition_temperature} {timeRange}",
        ],
    },
];

const MINI: &[DomainSpec] = &[
    DomainSpec {
        name: "PlayMusic",
        count: 80,
        templates: &[
            "play {genre} by {artist}",
            "play some {artist}",
            "put on {genre} music",
            "play {artist} {timeRange}",
            "i want to hear {artist}",
            "play the best {genre} songs",
            "queue {artist} and some {genre}",
        ],
    },
    DomainSpec {
        name: "BookRestaurant",
        count: 80,
        templates: &[
            "book a table for {party_size_number} in {city}",
            "find {cuisine} food in {city} {timeRange}",
            "reserve {cuisine} for {party_size_number} {timeRange}",
            "i need a {cuisine} place for {party_size_number}",
            "book {cuisine} in {city}",
            "table for {party_size_number} at a {cuisine} restaurant {timeRange}",
        ],
    },
    DomainSpec {
        name: "SearchScreeningEvent",
        count: 80,
        templates: &[
            "when is {movie_name} playing in {city}",
            "show times for {movie_name} {timeRange}",
            "is {movie_name} showing {timeRange}",
            "find cinemas in {city} showing {movie_name}",
            "where can i see {movie_name}",
            "movies in {city} {timeRange}",
        ],
    },
    DomainSpec {
        name: "GetWeather",
        count: 60,
        templates: &[
            "will it be {condition_description} in {city} {timeRange}",
            "is it {condition_temperature} in {city}",
            "weather for {city} {timeRange}",
            "will it be {condition_temperature} {timeRange}",
            "is it going to be {condition_description} {timeRange}",
            "how {condition_temperature} is it in {city}",
            "forecast {condition_description} and {condition_temperature} in {city}",
        ],
    },
];

fn render(template: &str, values: &BTreeMap<&str, Vec<&str>>, rng: &mut Rng) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for piece in template.split(' ') {
        if let Some(slot) = piece.strip_prefix('{').and_then(|p| p.strip_suffix('}')) {
            let value = values[slot].choose(rng).expect("non-empty value list");
            for (i, w) in value.split(' ').enumerate() {
                let tag = if i == 0 { format!("B-{slot}") } else { format!("I-{slot}") };
                out.push((w.to_string(), tag));
            }
        } else {
            out.push((piece.to_string(), "O".to_string()));
        }
    }
    out
}

fn write_corpus(dir: &Path, specs: &[DomainSpec], seed: u64) {
    fs::create_dir_all(dir).expect("create corpus dir");
    let values = values();
    let mut rng = seeded(seed);
    for spec in specs {
        let mut text = format!("# domain: {}\n", spec.name);
        for n in 0..spec.count {
            // Cycle through templates so every one is represented.
            let template = spec.templates[n % spec.templates.len()];
            for (w, t) in render(template, &values, &mut rng) {
                text.push_str(&format!("{w}\t{t}\n"));
            }
            text.push('\n');
        }
        fs::write(dir.join(format!("{}.conll", spec.name)), text).expect("write corpus");
    }
}

fn write_embeddings(path: &Path, seed: u64) {
    let mut rng = seeded(seed);
    let mut text = String::new();
    for (_, words) in CLUSTERS {
        let center: Vec<f64> = (0..DIM).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for w in *words {
            text.push_str(w);
            for c in &center {
                let v = c + rng.gen_range(-0.15..0.15);
                text.push_str(&format!(" {v:.5}"));
            }
            text.push('\n');
        }
    }
    fs::write(path, text).expect("write embeddings");
}

fn main() {
    let root = std::env::args().nth(1).unwrap_or_else(|| "crates/core/fixtures".to_string());
    let root = Path::new(&root);
    write_corpus(&root.join("smoke"), SMOKE, 11);
    write_corpus(&root.join("mini"), MINI, 23);
    write_embeddings(&root.join("embeddings16.txt"), 37);
    println!("fixtures written to {}", root.display());
}
