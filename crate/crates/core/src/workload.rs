//! Deterministic synthetic schemas, data and queries.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cardinality::{estimate_conjunction, leaf_estimate};
use crate::catalog::{csv_path, write_csv, Catalog, SchemaDoc, TableDef};
use crate::driver::{run_vanilla, RunOptions};
use crate::error::{Error, Result};
use crate::query::{Leaf, QueryShape};
use crate::splitter_dag::{build_dag, find_split_points};
use crate::sql::parse_query;
use crate::types::{Column, DataType, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Uniform,
    Correlated,
    Star,
    Chain,
    Fig2,
}

impl Preset {
    pub fn name(self) -> &'static str {
        match self {
            Preset::Uniform => "uniform",
            Preset::Correlated => "correlated",
            Preset::Star => "star",
            Preset::Chain => "chain",
            Preset::Fig2 => "fig2",
        }
    }

    pub fn default_queries(self) -> usize {
        match self {
            Preset::Chain => 10,
            Preset::Fig2 => 1,
            _ => 20,
        }
    }
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Preset> {
        Ok(match s {
            "uniform" => Preset::Uniform,
            "correlated" => Preset::Correlated,
            "star" => Preset::Star,
            "chain" => Preset::Chain,
            "fig2" => Preset::Fig2,
            other => return Err(Error::Config(format!("unknown preset `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenSpec {
    pub preset: Preset,
    /// Base row multiplier, in thousands.
    pub scale: u32,
    pub seed: u64,
    pub num_queries: usize,
}

impl GenSpec {
    pub fn new(preset: Preset, scale: u32, seed: u64) -> GenSpec {
        GenSpec {
            preset,
            scale,
            seed,
            num_queries: preset.default_queries(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableEntry {
    pub name: String,
    pub file: String,
    pub rows: usize,
}

/// Two predicates on one table whose joint selectivity the independence
/// assumption gets wrong.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelatedPair {
    pub table: String,
    pub predicates: [String; 2],
    pub true_selectivity: f64,
    pub independent_estimate: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEntry {
    pub name: String,
    pub file: String,
    pub relations: usize,
    pub joins: usize,
    pub split_points: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub preset: Preset,
    pub scale: u32,
    pub seed: u64,
    pub tables: Vec<TableEntry>,
    pub correlated_pairs: Vec<CorrelatedPair>,
    pub queries: Vec<QueryEntry>,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes") + "\n"
    }
}

#[derive(Debug, Clone)]
pub struct GenTable {
    pub def: TableDef,
    pub columns: Vec<Column>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenQuery {
    pub name: String,
    pub sql: String,
}

#[derive(Debug, Clone)]
pub struct Workload {
    pub spec: GenSpec,
    pub tables: Vec<GenTable>,
    pub queries: Vec<GenQuery>,
    pub manifest: Manifest,
}

impl Workload {
    pub fn catalog(&self) -> Result<Catalog> {
        let mut c = Catalog::new();
        for t in &self.tables {
            let id = c.create_table(t.def.clone(), t.columns.clone())?;
            c.analyze(id)?;
        }
        Ok(c)
    }

    /// Writes schema.json, one CSV per table, queries/*.sql and manifest.json.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir.join("queries"))?;
        let doc = SchemaDoc {
            tables: self.tables.iter().map(|t| t.def.clone()).collect(),
        };
        std::fs::write(dir.join("schema.json"), doc.to_json())?;
        for t in &self.tables {
            let f = std::fs::File::create(csv_path(dir, &t.def.name))?;
            write_csv(std::io::BufWriter::new(f), &t.def, &t.columns)?;
        }
        for q in &self.queries {
            std::fs::write(
                dir.join("queries").join(format!("{}.sql", q.name)),
                format!("{}\n", q.sql),
            )?;
        }
        std::fs::write(dir.join("manifest.json"), self.manifest.to_json())?;
        Ok(())
    }
}

pub fn generate(spec: &GenSpec) -> Result<Workload> {
    generate_with(spec, &Knobs::default())
}

#[doc(hidden)]
pub fn generate_with(spec: &GenSpec, knobs: &Knobs) -> Result<Workload> {
    if spec.scale == 0 {
        return Err(Error::Config("scale must be at least 1".into()));
    }
    let mut g = Gen {
        seed: spec.seed,
        scale: spec.scale as usize,
        knobs: *knobs,
        tables: Vec::new(),
    };
    let (queries, pairs) = match spec.preset {
        Preset::Correlated => g.imdb_like(spec.num_queries, true),
        Preset::Uniform => g.imdb_like(spec.num_queries, false),
        Preset::Star => g.star(spec.num_queries),
        Preset::Chain => g.chain(spec.num_queries),
        Preset::Fig2 => g.fig2(spec.num_queries),
    };
    let queries: Vec<GenQuery> = queries
        .into_iter()
        .enumerate()
        .map(|(i, sql)| GenQuery {
            name: format!("q{:02}", i + 1),
            sql,
        })
        .collect();
    let mut w = Workload {
        spec: *spec,
        tables: g.tables,
        queries,
        manifest: Manifest {
            preset: spec.preset,
            scale: spec.scale,
            seed: spec.seed,
            tables: Vec::new(),
            correlated_pairs: Vec::new(),
            queries: Vec::new(),
            files: Vec::new(),
        },
    };
    let catalog = w.catalog()?;
    let mut m = w.manifest.clone();
    m.tables = w
        .tables
        .iter()
        .map(|t| TableEntry {
            name: t.def.name.clone(),
            file: format!("{}.csv", t.def.name),
            rows: t.columns.first().map_or(0, Column::len),
        })
        .collect();
    for (table, a, b) in pairs {
        m.correlated_pairs
            .push(measure_pair(&catalog, &table, &a, &b)?);
    }
    for q in &w.queries {
        let shape = QueryShape::extract(&parse_query(&q.sql, &catalog)?, &catalog)?;
        let split_points = match build_dag(&shape, &catalog) {
            Ok(dag) => find_split_points(&dag)
                .into_iter()
                .map(|v| dag.vertices[v].clone())
                .collect(),
            Err(_) => Vec::new(),
        };
        m.queries.push(QueryEntry {
            name: q.name.clone(),
            file: format!("queries/{}.sql", q.name),
            relations: shape.leaves.len(),
            joins: shape.joins.len(),
            split_points,
        });
    }
    m.files = std::iter::once("schema.json".to_string())
        .chain(m.tables.iter().map(|t| t.file.clone()))
        .chain(m.queries.iter().map(|q| q.file.clone()))
        .collect();
    w.manifest = m;
    Ok(w)
}

/// Counts the joint selectivity of two predicates by a full scan and compares it
/// with the model's independence estimate.
fn measure_pair(catalog: &Catalog, table: &str, a: &str, b: &str) -> Result<CorrelatedPair> {
    let plan = parse_query(
        &format!("SELECT COUNT(*) FROM {table} WHERE {a} AND {b}"),
        catalog,
    )?;
    let shape = QueryShape::extract(&plan, catalog)?;
    let base = leaf_estimate(&Leaf::scan(table, table), catalog)?;
    let est = estimate_conjunction(&shape.leaves[0].filters, &base).fraction;
    let out = run_vanilla(catalog, &plan, &RunOptions::default())?;
    let hits = match out.result.row(0).first() {
        Some(Value::Int(n)) => *n as f64,
        _ => 0.0,
    };
    let true_sel = hits / base.rows.max(1.0);
    Ok(CorrelatedPair {
        table: table.to_string(),
        predicates: [a.to_string(), b.to_string()],
        true_selectivity: true_sel,
        independent_estimate: est,
        gap: if est > 0.0 {
            true_sel / est
        } else {
            f64::INFINITY
        },
    })
}

/// Shape parameters of the movie-centered presets.
#[doc(hidden)]
#[derive(Debug, Clone, Copy)]
pub struct Knobs {
    pub titles: usize,
    /// Fraction of titles in each hot kind.
    pub hot_title_share: f64,
    /// Relative weight of a hot kind when a satellite row picks its movie.
    pub hot_weight: f64,
    pub movie_info: usize,
    pub movie_keyword: usize,
    pub cast_info: usize,
    pub movie_companies: usize,
    pub keyword_skew: f64,
    pub hot_popular_keyword: f64,
    pub hot_female_cast: f64,
    pub hot_domestic_company: f64,
}

impl Default for Knobs {
    fn default() -> Self {
        Knobs {
            titles: 3000,
            hot_title_share: 0.03,
            hot_weight: 4.0,
            movie_info: 6000,
            movie_keyword: 8000,
            cast_info: 10000,
            movie_companies: 12000,
            keyword_skew: 1.2,
            hot_popular_keyword: 0.95,
            hot_female_cast: 0.9,
            hot_domestic_company: 0.02,
        }
    }
}

/// Uniform index below `n`, drawn the same way on 32- and 64-bit targets.
trait Pick {
    fn pick(&mut self, n: usize) -> usize;
}

impl<R: Rng + ?Sized> Pick for R {
    fn pick(&mut self, n: usize) -> usize {
        self.gen_range(0..n as u64) as usize
    }
}

fn fnv(s: &str) -> u64 {
    s.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

fn ints(v: Vec<i64>) -> Column {
    Column::Int(v)
}

fn texts(v: Vec<String>) -> Column {
    Column::Text(v.into_iter().map(Arc::from).collect())
}

/// Value at fraction `p` of the sorted column.
fn quantile(values: &[i64], p: f64) -> i64 {
    let mut v = values.to_vec();
    v.sort_unstable();
    v[((v.len() - 1) as f64 * p).round() as usize]
}

struct Gen {
    seed: u64,
    scale: usize,
    knobs: Knobs,
    tables: Vec<GenTable>,
}

impl Gen {
    fn rng(&self, stream: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed ^ fnv(stream))
    }

    fn rows(&self, thousands_x10: usize) -> usize {
        thousands_x10 * self.scale * 100
    }

    fn add(&mut self, def: TableDef, columns: Vec<Column>) {
        self.tables.push(GenTable { def, columns });
    }

    fn int_col(&self, table: &str, col: &str) -> &[i64] {
        let t = self
            .tables
            .iter()
            .find(|t| t.def.name == table)
            .expect("generated table");
        match &t.columns[t.def.column_index(col).expect("generated column")] {
            Column::Int(v) => v,
            _ => panic!("{table}.{col} is not an integer column"),
        }
    }

    /// Movie-centered schema. When `correlated` is set, title attributes are
    /// tied together, satellites cluster on a few hot kinds, keyword usage is
    /// heavily skewed toward low ids, and cast members of hot movies are mostly
    /// women from early decades.
    fn imdb_like(
        &mut self,
        num_queries: usize,
        correlated: bool,
    ) -> (Vec<String>, Vec<(String, String, String)>) {
        let kinds = 12i64;
        let hot = [0i64, 1, 2];
        let kn = self.knobs;
        let n_t = kn.titles * self.scale;
        let kind_share: Vec<f64> = (0..kinds)
            .map(|k| {
                if !correlated {
                    1.0
                } else if hot.contains(&k) {
                    kn.hot_title_share
                } else {
                    (1.0 - kn.hot_title_share * hot.len() as f64)
                        / (kinds as usize - hot.len()) as f64
                }
            })
            .collect();
        let kind_title = WeightedIndex::new(&kind_share).expect("weights");
        let mut rng = self.rng("title");
        let mut kind = Vec::with_capacity(n_t);
        let mut genre = Vec::with_capacity(n_t);
        let mut year = Vec::with_capacity(n_t);
        for _ in 0..n_t {
            let k = kind_title.sample(&mut rng) as i64;
            kind.push(k);
            if correlated {
                genre.push(2 * k + rng.gen_range(0..2));
                year.push(1950 + k * 5 + rng.gen_range(0..10));
            } else {
                genre.push(rng.gen_range(0..2 * kinds));
                year.push(rng.gen_range(1950..2015));
            }
        }
        let kind_of = kind.clone();
        let mut by_kind: Vec<Vec<i64>> = vec![Vec::new(); kinds as usize];
        for (i, k) in kind.iter().enumerate() {
            by_kind[*k as usize].push(i as i64);
        }
        self.add(
            TableDef::new(
                "title",
                &[
                    ("id", DataType::Int64),
                    ("kind_id", DataType::Int64),
                    ("genre", DataType::Int64),
                    ("production_year", DataType::Int64),
                ],
            )
            .with_primary_key("id"),
            vec![
                ints((0..n_t as i64).collect()),
                ints(kind),
                ints(genre),
                ints(year),
            ],
        );

        // Keyword groups follow id order, so with skewed usage the high groups
        // are rarely referenced.
        let n_k = self.rows(10);
        let groups = 20i64;
        let mut rng = self.rng("keyword");
        let grp: Vec<i64> = (0..n_k as i64).map(|i| i * groups / n_k as i64).collect();
        let topic: Vec<i64> = grp
            .iter()
            .map(|g| {
                if correlated {
                    g * 2 + rng.gen_range(0..2)
                } else {
                    rng.gen_range(0..2 * groups)
                }
            })
            .collect();
        self.add(
            TableDef::new(
                "keyword",
                &[
                    ("id", DataType::Int64),
                    ("grp", DataType::Int64),
                    ("topic", DataType::Int64),
                    ("keyword", DataType::Text),
                ],
            )
            .with_primary_key("id"),
            vec![
                ints((0..n_k as i64).collect()),
                ints(grp),
                ints(topic),
                texts((0..n_k).map(|i| format!("kw{:05}", i)).collect()),
            ],
        );

        let n_n = self.rows(40);
        let mut rng = self.rng("name");
        let mut gender = Vec::with_capacity(n_n);
        let mut decade = Vec::with_capacity(n_n);
        for _ in 0..n_n {
            let f = rng.gen_bool(0.3);
            gender.push(if f { "f" } else { "m" }.to_string());
            decade.push(if correlated && f {
                rng.gen_range(0..3)
            } else {
                rng.gen_range(0..10)
            });
        }
        let female: Vec<i64> = (0..n_n as i64)
            .filter(|&i| gender[i as usize] == "f")
            .collect();
        self.add(
            TableDef::new(
                "name",
                &[
                    ("id", DataType::Int64),
                    ("gender", DataType::Text),
                    ("decade", DataType::Int64),
                ],
            )
            .with_primary_key("id"),
            vec![ints((0..n_n as i64).collect()), texts(gender), ints(decade)],
        );

        let n_cn = self.rows(5);
        let countries = ["us", "uk", "fr", "de", "jp", "in", "it", "es", "ca", "br"];
        let cw = WeightedIndex::new([40, 12, 8, 8, 8, 6, 6, 4, 4, 4]).expect("weights");
        let mut rng = self.rng("company_name");
        let country: Vec<String> = (0..n_cn)
            .map(|_| countries[cw.sample(&mut rng)].to_string())
            .collect();
        self.add(
            TableDef::new(
                "company_name",
                &[("id", DataType::Int64), ("country_code", DataType::Text)],
            )
            .with_primary_key("id"),
            vec![ints((0..n_cn as i64).collect()), texts(country.clone())],
        );

        // A satellite row picks a movie by first picking a kind; hot kinds get
        // most of the rows when correlated.
        let kind_w: Vec<f64> = (0..kinds)
            .map(|k| {
                if correlated && hot.contains(&k) {
                    kn.hot_weight
                } else {
                    1.0
                }
            })
            .collect();
        let kind_pick = WeightedIndex::new(&kind_w).expect("weights");
        let movie = |rng: &mut ChaCha8Rng| {
            let pool = &by_kind[kind_pick.sample(rng)];
            pool[rng.pick(pool.len())]
        };

        let n_mi = kn.movie_info * self.scale;
        let mut rng = self.rng("movie_info");
        let mi_movie: Vec<i64> = (0..n_mi).map(|_| movie(&mut rng)).collect();
        let info_type: Vec<i64> = (0..n_mi).map(|_| rng.gen_range(0..16)).collect();
        self.add(
            TableDef::new(
                "movie_info",
                &[
                    ("id", DataType::Int64),
                    ("movie_id", DataType::Int64),
                    ("info_type_id", DataType::Int64),
                ],
            )
            .with_primary_key("id")
            .with_foreign_key("movie_id", "title", "id"),
            vec![
                ints((0..n_mi as i64).collect()),
                ints(mi_movie),
                ints(info_type),
            ],
        );

        let n_mk = kn.movie_keyword * self.scale;
        let mut rng = self.rng("movie_keyword");
        let kw_pick = if correlated {
            WeightedIndex::new((0..n_k).map(|i| 1.0 / ((i + 1) as f64).powf(kn.keyword_skew)))
                .expect("weights")
        } else {
            WeightedIndex::new(vec![1.0; n_k]).expect("weights")
        };
        let mk_movie: Vec<i64> = (0..n_mk).map(|_| movie(&mut rng)).collect();
        let popular = n_k as i64 / groups;
        let mk_kw: Vec<i64> = mk_movie
            .iter()
            .map(|&m| {
                if correlated
                    && hot.contains(&kind_of[m as usize])
                    && rng.gen_bool(kn.hot_popular_keyword)
                {
                    rng.gen_range(0..popular)
                } else {
                    kw_pick.sample(&mut rng) as i64
                }
            })
            .collect();
        self.add(
            TableDef::new(
                "movie_keyword",
                &[
                    ("id", DataType::Int64),
                    ("movie_id", DataType::Int64),
                    ("keyword_id", DataType::Int64),
                ],
            )
            .with_primary_key("id")
            .with_foreign_key("movie_id", "title", "id")
            .with_foreign_key("keyword_id", "keyword", "id"),
            vec![
                ints((0..n_mk as i64).collect()),
                ints(mk_movie),
                ints(mk_kw),
            ],
        );

        let n_ci = kn.cast_info * self.scale;
        let mut rng = self.rng("cast_info");
        let mut ci_movie = Vec::with_capacity(n_ci);
        let mut ci_person = Vec::with_capacity(n_ci);
        for _ in 0..n_ci {
            let m = movie(&mut rng);
            ci_movie.push(m);
            if correlated && hot.contains(&kind_of[m as usize]) && rng.gen_bool(kn.hot_female_cast)
            {
                ci_person.push(female[rng.pick(female.len())]);
            } else {
                ci_person.push(rng.gen_range(0..n_n as i64));
            }
        }
        let role: Vec<i64> = (0..n_ci).map(|_| rng.gen_range(0..10)).collect();
        self.add(
            TableDef::new(
                "cast_info",
                &[
                    ("id", DataType::Int64),
                    ("movie_id", DataType::Int64),
                    ("person_id", DataType::Int64),
                    ("role_id", DataType::Int64),
                ],
            )
            .with_primary_key("id")
            .with_foreign_key("movie_id", "title", "id")
            .with_foreign_key("person_id", "name", "id"),
            vec![
                ints((0..n_ci as i64).collect()),
                ints(ci_movie),
                ints(ci_person),
                ints(role),
            ],
        );

        let n_mc = kn.movie_companies * self.scale;
        let mut rng = self.rng("movie_companies");
        let mc_movie: Vec<i64> = (0..n_mc).map(|_| movie(&mut rng)).collect();
        // Hot movies are produced almost entirely outside the largest country.
        let foreign: Vec<i64> = (0..n_cn as i64)
            .filter(|&i| country[i as usize] != "us")
            .collect();
        let mc_company: Vec<i64> = mc_movie
            .iter()
            .map(|&m| {
                if correlated
                    && hot.contains(&kind_of[m as usize])
                    && !rng.gen_bool(kn.hot_domestic_company)
                {
                    foreign[rng.pick(foreign.len())]
                } else {
                    rng.gen_range(0..n_cn as i64)
                }
            })
            .collect();
        let ctype: Vec<i64> = (0..n_mc).map(|_| rng.gen_range(0..4)).collect();
        self.add(
            TableDef::new(
                "movie_companies",
                &[
                    ("id", DataType::Int64),
                    ("movie_id", DataType::Int64),
                    ("company_id", DataType::Int64),
                    ("company_type_id", DataType::Int64),
                ],
            )
            .with_primary_key("id")
            .with_foreign_key("movie_id", "title", "id")
            .with_foreign_key("company_id", "company_name", "id"),
            vec![
                ints((0..n_mc as i64).collect()),
                ints(mc_movie),
                ints(mc_company),
                ints(ctype),
            ],
        );

        let years = self.int_col("title", "production_year").to_vec();
        let mut queries = Vec::with_capacity(num_queries);
        // Relation sets, largest first; t is always present.
        let templates: [&[&str]; 8] = [
            &["t", "mi", "mk", "k", "ci", "n", "mc", "cn"],
            &["t", "mk", "k", "ci", "n", "mc", "cn"],
            &["t", "mi", "ci", "n", "mc", "cn", "mk"],
            &["t", "mi", "mk", "k", "ci", "n"],
            &["t", "mk", "k", "ci", "n", "mc", "cn"],
            &["t", "mi", "mk", "k", "mc", "cn"],
            &["t", "mi", "mk", "k", "ci", "n", "mc", "cn"],
            &["t", "ci", "n", "mc", "cn"],
        ];
        for q in 0..num_queries {
            let rels = templates[q % templates.len()];
            let k = if q % 5 == 4 {
                3 + (q as i64 % 9)
            } else {
                hot[q % hot.len()]
            };
            let mut from = Vec::new();
            let mut wh = Vec::new();
            for r in rels {
                let (table, preds): (&str, Vec<String>) = match *r {
                    "t" => {
                        let mut p = vec![
                            format!("t.kind_id = {k}"),
                            format!("t.genre = {}", 2 * k + (q as i64 % 2)),
                        ];
                        if q % 3 == 2 {
                            p.push(format!("t.production_year >= {}", quantile(&years, 0.1)));
                        }
                        ("title", p)
                    }
                    "mi" => (
                        "movie_info",
                        vec![format!("mi.info_type_id < {}", 4 + q % 6)],
                    ),
                    "mk" => ("movie_keyword", vec![]),
                    "k" => ("keyword", vec![format!("k.grp = {}", q as i64 % 2)]),
                    "ci" => ("cast_info", vec![format!("ci.role_id < {}", 3 + q % 5)]),
                    "n" => (
                        "name",
                        vec![
                            "n.gender = 'f'".to_string(),
                            format!("n.decade < {}", 1 + q % 3),
                        ],
                    ),
                    "mc" => ("movie_companies", vec![]),
                    "cn" => ("company_name", vec!["cn.country_code = 'us'".to_string()]),
                    _ => unreachable!(),
                };
                from.push(format!("{table} AS {r}"));
                wh.extend(preds);
            }
            for (a, b) in [
                ("mi", "mi.movie_id = t.id"),
                ("mk", "mk.movie_id = t.id"),
                ("k", "mk.keyword_id = k.id"),
                ("ci", "ci.movie_id = t.id"),
                ("n", "ci.person_id = n.id"),
                ("mc", "mc.movie_id = t.id"),
                ("cn", "mc.company_id = cn.id"),
            ] {
                if rels.contains(&a) {
                    wh.push(b.to_string());
                }
            }
            queries.push(format!(
                "SELECT COUNT(*) FROM {} WHERE {}",
                from.join(", "),
                wh.join(" AND ")
            ));
        }
        let pairs = vec![
            ("title".into(), "kind_id = 5".into(), "genre = 10".into()),
            ("keyword".into(), "grp = 3".into(), "topic = 6".into()),
        ];
        (queries, pairs)
    }

    /// Fact table `sales` with four dimensions; every query joins the fact with
    /// two or more of them.
    fn star(&mut self, num_queries: usize) -> (Vec<String>, Vec<(String, String, String)>) {
        let dims: [(&str, &str, usize); 4] = [
            ("store", "s", self.rows(2)),
            ("item", "i", self.rows(20)),
            ("customer", "c", self.rows(30)),
            ("date_dim", "d", self.rows(4)),
        ];
        for (name, _, n) in dims {
            let mut rng = self.rng(name);
            let cat: Vec<i64> = (0..n).map(|_| rng.gen_range(0..10)).collect();
            let band: Vec<i64> = (0..n).map(|_| rng.gen_range(0..100)).collect();
            self.add(
                TableDef::new(
                    name,
                    &[
                        ("id", DataType::Int64),
                        ("cat", DataType::Int64),
                        ("band", DataType::Int64),
                    ],
                )
                .with_primary_key("id"),
                vec![ints((0..n as i64).collect()), ints(cat), ints(band)],
            );
        }
        let n_f = self.rows(300);
        let mut rng = self.rng("sales");
        let mut cols = vec![ints((0..n_f as i64).collect())];
        let mut def = TableDef::new(
            "sales",
            &[
                ("id", DataType::Int64),
                ("store_id", DataType::Int64),
                ("item_id", DataType::Int64),
                ("customer_id", DataType::Int64),
                ("date_id", DataType::Int64),
                ("qty", DataType::Int64),
            ],
        )
        .with_primary_key("id");
        for (name, _, n) in dims {
            cols.push(ints((0..n_f).map(|_| rng.gen_range(0..n as i64)).collect()));
            let col = format!("{}_id", name.trim_end_matches("_dim"));
            def = def.with_foreign_key(&col, name, "id");
        }
        cols.push(ints((0..n_f).map(|_| rng.gen_range(1..20)).collect()));
        self.add(def, cols);

        let mut rng = self.rng("queries");
        let mut queries = Vec::new();
        for q in 0..num_queries {
            let count = 2 + q % 3;
            let start = q % 4;
            let mut from = vec!["sales AS f".to_string()];
            let mut wh = Vec::new();
            for j in 0..count {
                let (name, alias, _) = dims[(start + j) % 4];
                from.push(format!("{name} AS {alias}"));
                wh.push(format!(
                    "f.{}_id = {alias}.id",
                    name.trim_end_matches("_dim")
                ));
                wh.push(format!("{alias}.cat < {}", rng.gen_range(3..8)));
            }
            if q % 2 == 1 {
                wh.push(format!("f.qty < {}", rng.gen_range(5..15)));
            }
            queries.push(format!(
                "SELECT COUNT(*) FROM {} WHERE {}",
                from.join(", "),
                wh.join(" AND ")
            ));
        }
        (queries, Vec::new())
    }

    /// T1..T5 linked by a foreign-key chain; each query joins a window of 3 to 5
    /// consecutive tables.
    fn chain(&mut self, num_queries: usize) -> (Vec<String>, Vec<(String, String, String)>) {
        for i in 1..=5usize {
            let n = self.rows(10 * i);
            let name = format!("t{i}");
            let mut rng = self.rng(&name);
            let mut def = TableDef::new(
                &name,
                &[
                    ("id", DataType::Int64),
                    ("prev_id", DataType::Int64),
                    ("a", DataType::Int64),
                    ("b", DataType::Text),
                ],
            )
            .with_primary_key("id");
            let prev: Vec<i64> = if i == 1 {
                (0..n).map(|_| rng.gen_range(0..100)).collect()
            } else {
                def = def.with_foreign_key("prev_id", &format!("t{}", i - 1), "id");
                let m = self.rows(10 * (i - 1)) as i64;
                (0..n).map(|_| rng.gen_range(0..m)).collect()
            };
            let a: Vec<i64> = (0..n).map(|_| rng.gen_range(0..100)).collect();
            let b: Vec<String> = (0..n)
                .map(|_| format!("v{}", rng.gen_range(0..8)))
                .collect();
            self.add(
                def,
                vec![ints((0..n as i64).collect()), ints(prev), ints(a), texts(b)],
            );
        }
        let mut rng = self.rng("queries");
        let mut queries = Vec::new();
        for q in 0..num_queries {
            let len = 3 + q % 3;
            let first = 1 + q % (6 - len);
            let tabs: Vec<usize> = (first..first + len).collect();
            let from: Vec<String> = tabs.iter().map(|i| format!("t{i}")).collect();
            let mut wh: Vec<String> = tabs
                .windows(2)
                .map(|w| format!("t{}.prev_id = t{}.id", w[1], w[0]))
                .collect();
            let f = tabs[rng.pick(tabs.len())];
            wh.push(format!("t{f}.a < {}", rng.gen_range(10..60)));
            if q % 2 == 0 {
                let g = tabs[rng.pick(tabs.len())];
                wh.push(format!("t{g}.b = 'v{}'", rng.gen_range(0..8)));
            }
            let select = if q % 3 == 0 {
                format!("SELECT t{f}.b, COUNT(*), SUM(t{f}.a)")
            } else {
                "SELECT COUNT(*)".to_string()
            };
            let group = if q % 3 == 0 {
                format!(" GROUP BY t{f}.b")
            } else {
                String::new()
            };
            queries.push(format!(
                "{select} FROM {} WHERE {}{group}",
                from.join(", "),
                wh.join(" AND ")
            ));
        }
        (queries, Vec::new())
    }

    /// Nine relations around `title`: complete_cast, movie_keyword and cast_info
    /// all reference it, each with its own dimensions.
    fn fig2(&mut self, num_queries: usize) -> (Vec<String>, Vec<(String, String, String)>) {
        let n_t = self.rows(20);
        let mut rng = self.rng("title");
        let year: Vec<i64> = (0..n_t).map(|_| rng.gen_range(1950..2020)).collect();
        self.add(
            TableDef::new(
                "title",
                &[
                    ("id", DataType::Int64),
                    ("production_year", DataType::Int64),
                ],
            )
            .with_primary_key("id"),
            vec![ints((0..n_t as i64).collect()), ints(year)],
        );
        let kinds = ["cast", "crew", "complete", "complete+verified"];
        self.add(
            TableDef::new(
                "comp_cast_type",
                &[("id", DataType::Int64), ("kind", DataType::Text)],
            )
            .with_primary_key("id"),
            vec![
                ints((0..4).collect()),
                texts(kinds.iter().map(|s| s.to_string()).collect()),
            ],
        );
        let n_cc = self.rows(10);
        let mut rng = self.rng("complete_cast");
        let cc_movie: Vec<i64> = (0..n_cc).map(|_| rng.gen_range(0..n_t as i64)).collect();
        let subject: Vec<i64> = (0..n_cc).map(|_| rng.gen_range(0..2)).collect();
        let status: Vec<i64> = (0..n_cc).map(|_| rng.gen_range(2..4)).collect();
        self.add(
            TableDef::new(
                "complete_cast",
                &[
                    ("id", DataType::Int64),
                    ("movie_id", DataType::Int64),
                    ("subject_id", DataType::Int64),
                    ("status_id", DataType::Int64),
                ],
            )
            .with_primary_key("id")
            .with_foreign_key("movie_id", "title", "id")
            .with_foreign_key("subject_id", "comp_cast_type", "id")
            .with_foreign_key("status_id", "comp_cast_type", "id"),
            vec![
                ints((0..n_cc as i64).collect()),
                ints(cc_movie),
                ints(subject),
                ints(status),
            ],
        );
        let n_k = self.rows(10);
        let mut rng = self.rng("keyword");
        let kw: Vec<String> = (0..n_k)
            .map(|i| {
                let stem = ["murder", "blood", "violence", "love", "family", "war"][rng.pick(6)];
                format!("{stem}-{i}")
            })
            .collect();
        self.add(
            TableDef::new(
                "keyword",
                &[("id", DataType::Int64), ("keyword", DataType::Text)],
            )
            .with_primary_key("id"),
            vec![ints((0..n_k as i64).collect()), texts(kw)],
        );
        let n_mk = self.rows(60);
        let mut rng = self.rng("movie_keyword");
        let mk_movie: Vec<i64> = (0..n_mk).map(|_| rng.gen_range(0..n_t as i64)).collect();
        let mk_kw: Vec<i64> = (0..n_mk).map(|_| rng.gen_range(0..n_k as i64)).collect();
        self.add(
            TableDef::new(
                "movie_keyword",
                &[
                    ("id", DataType::Int64),
                    ("movie_id", DataType::Int64),
                    ("keyword_id", DataType::Int64),
                ],
            )
            .with_primary_key("id")
            .with_foreign_key("movie_id", "title", "id")
            .with_foreign_key("keyword_id", "keyword", "id"),
            vec![
                ints((0..n_mk as i64).collect()),
                ints(mk_movie),
                ints(mk_kw),
            ],
        );
        let n_n = self.rows(30);
        let mut rng = self.rng("name");
        let gender: Vec<String> = (0..n_n)
            .map(|_| if rng.gen_bool(0.4) { "f" } else { "m" }.to_string())
            .collect();
        self.add(
            TableDef::new(
                "name",
                &[("id", DataType::Int64), ("gender", DataType::Text)],
            )
            .with_primary_key("id"),
            vec![ints((0..n_n as i64).collect()), texts(gender)],
        );
        let n_chn = self.rows(20);
        let mut rng = self.rng("char_name");
        let chn: Vec<String> = (0..n_chn)
            .map(|i| format!("{}{i}", ["Queen", "King", "Man", "Woman"][rng.pick(4)]))
            .collect();
        self.add(
            TableDef::new(
                "char_name",
                &[("id", DataType::Int64), ("name", DataType::Text)],
            )
            .with_primary_key("id"),
            vec![ints((0..n_chn as i64).collect()), texts(chn)],
        );
        let n_ci = self.rows(80);
        let mut rng = self.rng("cast_info");
        let ci_movie: Vec<i64> = (0..n_ci).map(|_| rng.gen_range(0..n_t as i64)).collect();
        let ci_person: Vec<i64> = (0..n_ci).map(|_| rng.gen_range(0..n_n as i64)).collect();
        let ci_role: Vec<i64> = (0..n_ci).map(|_| rng.gen_range(0..n_chn as i64)).collect();
        self.add(
            TableDef::new(
                "cast_info",
                &[
                    ("id", DataType::Int64),
                    ("movie_id", DataType::Int64),
                    ("person_id", DataType::Int64),
                    ("person_role_id", DataType::Int64),
                ],
            )
            .with_primary_key("id")
            .with_foreign_key("movie_id", "title", "id")
            .with_foreign_key("person_id", "name", "id")
            .with_foreign_key("person_role_id", "char_name", "id"),
            vec![
                ints((0..n_ci as i64).collect()),
                ints(ci_movie),
                ints(ci_person),
                ints(ci_role),
            ],
        );
        let years = self.int_col("title", "production_year").to_vec();
        let mut queries = Vec::new();
        let stems = ["murder", "blood", "violence"];
        for q in 0..num_queries.max(1) {
            let mut sql = String::from(
                "SELECT MIN(chn.name), MIN(t.production_year) \
                 FROM complete_cast AS cc, comp_cast_type AS cct1, comp_cast_type AS cct2, char_name AS chn, \
                 cast_info AS ci, keyword AS k, movie_keyword AS mk, name AS n, title AS t WHERE ",
            );
            let _ = write!(
                sql,
                "cct1.kind = 'cast' AND cct2.kind = 'complete+verified' AND k.keyword LIKE '{}%' \
                 AND n.gender = 'f' AND t.production_year > {} \
                 AND t.id = mk.movie_id AND t.id = ci.movie_id AND t.id = cc.movie_id \
                 AND chn.id = ci.person_role_id AND n.id = ci.person_id AND k.id = mk.keyword_id \
                 AND cct1.id = cc.subject_id AND cct2.id = cc.status_id",
                stems[q % 3],
                quantile(&years, 0.3)
            );
            queries.push(sql);
        }
        (queries, Vec::new())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use sha2::{Digest, Sha256};

    fn digests(dir: &Path, files: &[String]) -> Vec<(String, Vec<u8>)> {
        let mut all: Vec<String> = files.to_vec();
        all.push("manifest.json".into());
        all.into_iter()
            .map(|f| {
                let bytes = std::fs::read(dir.join(&f)).unwrap();
                (f, Sha256::digest(&bytes).to_vec())
            })
            .collect()
    }

    #[test]
    fn same_spec_same_bytes() {
        let spec = GenSpec::new(Preset::Chain, 1, 9);
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        let w = generate(&spec).unwrap();
        w.write(a.path()).unwrap();
        generate(&spec).unwrap().write(b.path()).unwrap();
        assert_eq!(
            digests(a.path(), &w.manifest.files),
            digests(b.path(), &w.manifest.files)
        );
        let other = generate(&GenSpec::new(Preset::Chain, 1, 10)).unwrap();
        assert_ne!(other.tables[0].columns, w.tables[0].columns);
    }

    #[test]
    fn foreign_keys_resolve() {
        for preset in [
            Preset::Correlated,
            Preset::Star,
            Preset::Chain,
            Preset::Fig2,
        ] {
            let w = generate(&GenSpec::new(preset, 1, 42)).unwrap();
            let by_name: std::collections::HashMap<&str, &GenTable> =
                w.tables.iter().map(|t| (t.def.name.as_str(), t)).collect();
            for t in &w.tables {
                for fk in &t.def.foreign_keys {
                    let target = by_name[fk.ref_table.as_str()];
                    let keys: std::collections::HashSet<Value> = {
                        let c = &target.columns[target.def.column_index(&fk.ref_column).unwrap()];
                        (0..c.len()).map(|i| c.value(i)).collect()
                    };
                    let c = &t.columns[t.def.column_index(&fk.column).unwrap()];
                    for i in 0..c.len() {
                        assert!(
                            keys.contains(&c.value(i)),
                            "{}.{} row {i}",
                            t.def.name,
                            fk.column
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn correlated_pairs_fool_the_estimator() {
        let w = generate(&GenSpec::new(Preset::Correlated, 1, 42)).unwrap();
        assert!(!w.manifest.correlated_pairs.is_empty());
        for p in &w.manifest.correlated_pairs {
            assert!(p.gap >= 10.0, "{p:?}");
        }
        let cat = w.catalog().unwrap();
        let mut nonempty = 0;
        for q in &w.queries {
            let out = run_vanilla(
                &cat,
                &parse_query(&q.sql, &cat).unwrap(),
                &RunOptions::default(),
            )
            .unwrap();
            if out.result.row(0) != vec![Value::Int(0)] {
                nonempty += 1;
            }
        }
        assert!(nonempty * 5 >= w.queries.len() * 4 - 5, "{nonempty}");
    }

    #[test]
    fn chain_shape() {
        let w = generate(&GenSpec::new(Preset::Chain, 1, 1)).unwrap();
        let rows: Vec<usize> = w.manifest.tables.iter().map(|t| t.rows).collect();
        assert_eq!(rows, vec![1000, 2000, 3000, 4000, 5000]);
        assert_eq!(w.queries.len(), 10);
        assert!(w
            .manifest
            .queries
            .iter()
            .all(|q| (2..=4).contains(&q.joins)));
    }

    #[test]
    fn fig2_splits_at_title() {
        let w = generate(&GenSpec::new(Preset::Fig2, 1, 42)).unwrap();
        assert_eq!(w.manifest.queries[0].relations, 9);
        assert_eq!(w.manifest.queries[0].split_points, vec!["t".to_string()]);
    }

    #[test]
    fn star_has_no_split_points() {
        let w = generate(&GenSpec::new(Preset::Star, 1, 42)).unwrap();
        assert!(w
            .manifest
            .queries
            .iter()
            .all(|q| q.split_points.is_empty() && q.relations >= 3));
    }
}
