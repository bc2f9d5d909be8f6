#include "stner/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <memory>
#include <ostream>
#include <set>
#include <sstream>

#include <openssl/evp.h>

#include "stner/checkpoint.hpp"
#include "stner/error.hpp"
#include "stner/rng.hpp"

namespace stner {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

// ---------------------------------------------------------------------------
// Configuration

namespace {

std::string regime_name(Regime r) {
  switch (r) {
    case Regime::kFullSet:
      return "full_set";
    case Regime::kFewShot:
      return "few_shot";
    case Regime::kLowResource:
      return "low_resource";
  }
  return "full_set";
}

Regime parse_regime(const std::string& s) {
  if (s == "full_set") return Regime::kFullSet;
  if (s == "few_shot") return Regime::kFewShot;
  if (s == "low_resource") return Regime::kLowResource;
  throw usage_error("unknown data regime '" + s + "' (expected full_set, few_shot or low_resource)");
}

void check_keys(const nlohmann::json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw usage_error("config section '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw usage_error("unknown config key '" + where + "." + it.key() + "'");
  }
}

const nlohmann::json& section(const nlohmann::json& j, const char* name) {
  static const nlohmann::json empty = nlohmann::json::object();
  return j.contains(name) ? j.at(name) : empty;
}

}  // namespace

void PipelineConfig::validate() const {
  if (data.types.empty()) throw usage_error("data.types must list at least one entity type");
  TypeRegistry check(data.types);
  if (data.max_len == 0) throw usage_error("data.max_len must be positive");
  if (data.regime == Regime::kFewShot && data.few_shot_k == 0) throw usage_error("data.few_shot_k must be positive");
  if (data.regime == Regime::kLowResource && data.low_resource_n == 0)
    throw usage_error("data.low_resource_n must be positive");
  if (synth.drop_probability < 0 || synth.drop_probability >= 1)
    throw usage_error("synth.drop_probability must lie in [0, 1)");
  if (synth.lowercase_entity_probability < 0 || synth.lowercase_entity_probability > 1)
    throw usage_error("synth.lowercase_entity_probability must lie in [0, 1]");
  if (model.embedding_dim == 0) throw usage_error("model.embedding_dim must be positive");
  train.validate();
  loss_weights.validate();
  prefixes.validate();
  sampler.validate();
  if (candidates == 0) throw usage_error("sampler.candidates must be positive");
  if (generate_max_len < 2) throw usage_error("sampler.max_len must be at least 2");
  selection.weights.validate();
  if (selection.bigram_k < 0) throw usage_error("selection.bigram_k must be non-negative");
  if (!(selection.fluency_c > 0)) throw usage_error("selection.fluency_c must be positive");
  tagger.validate();
  selector_slug(pseudo_label.tagger);
  selector_slug(ner.selector);
  for (const auto& m : evaluate.methods) selector_slug(m);
  if (paths.out.empty()) throw usage_error("paths.out must not be empty");
}

ojson to_json(const PipelineConfig& c) {
  ojson j;
  j["schema_version"] = kPipelineSchemaVersion;
  j["seed"] = c.seed;
  j["paths"] = {{"parallel", c.paths.parallel},     {"source", c.paths.source},
                {"target", c.paths.target},         {"target_dev", c.paths.target_dev},
                {"target_test", c.paths.target_test}, {"out", c.paths.out}};
  j["data"] = {{"types", c.data.types},
               {"max_len", c.data.max_len},
               {"regime", regime_name(c.data.regime)},
               {"few_shot_k", c.data.few_shot_k},
               {"low_resource_n", c.data.low_resource_n}};
  j["synth"] = {{"num_pairs", c.synth.num_pairs},
                {"num_source", c.synth.num_source},
                {"num_target", c.synth.num_target},
                {"num_target_dev", c.synth.num_target_dev},
                {"num_target_test", c.synth.num_target_test},
                {"drop_probability", c.synth.drop_probability},
                {"lowercase_entity_probability", c.synth.lowercase_entity_probability},
                {"pairs_with_gold_tags", c.synth.pairs_with_gold_tags}};
  j["model"] = to_json(c.model);
  j["train"] = {{"optimizer", to_json(c.train.optimizer)},
                {"epochs", c.train.epochs},
                {"batch_size", c.train.batch_size},
                {"stage2_start", c.train.stage2_start ? nlohmann::json(*c.train.stage2_start) : nlohmann::json()},
                {"tau", c.train.tau},
                {"train_discriminator_in_stage2", c.train.train_discriminator_in_stage2},
                {"warm_start_epochs", c.train.warm_start_epochs},
                {"warm_start_drop", c.train.warm_start_drop}};
  j["loss_weights"] = {{"pg", c.loss_weights.pg}, {"cr", c.loss_weights.cr}, {"adv", c.loss_weights.adv}};
  j["prefixes"] = to_json(c.prefixes);
  j["sampler"] = {{"top_k", c.sampler.top_k},
                  {"top_p", c.sampler.top_p},
                  {"temperature", c.sampler.temperature},
                  {"candidates", c.candidates},
                  {"max_len", c.generate_max_len}};
  const auto& w = c.selection.weights;
  const auto& s = c.selection.style;
  j["selection"] = {{"weights",
                     {{"consistency", w.consistency},
                      {"adequacy", w.adequacy},
                      {"fluency", w.fluency},
                      {"diversity", w.diversity}}},
                    {"style_classifier",
                     {{"dim", s.dim},
                      {"epochs", s.epochs},
                      {"batch_size", s.batch_size},
                      {"learning_rate", s.learning_rate},
                      {"init_scale", s.init_scale}}},
                    {"bigram_k", c.selection.bigram_k},
                    {"fluency_c", c.selection.fluency_c}};
  const auto& t = c.tagger;
  j["tagger"] = {{"embedding_dim", t.embedding_dim}, {"hidden_dim", t.hidden_dim}, {"window", t.window},
                 {"epochs", t.epochs},               {"batch_size", t.batch_size}, {"min_count", t.min_count},
                 {"init_scale", t.init_scale},       {"optimizer", to_json(t.optimizer)}};
  j["pseudo_label"] = {{"threshold", c.pseudo_label.threshold}, {"tagger", c.pseudo_label.tagger}};
  j["ner"] = {{"selector", c.ner.selector}};
  j["evaluate"] = {{"methods", c.evaluate.methods}, {"runs", c.evaluate.runs}};
  return j;
}

PipelineConfig pipeline_config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  try {
    check_keys(j, "config",
               {"schema_version", "seed", "paths", "data", "synth", "model", "train", "loss_weights", "prefixes",
                "sampler", "selection", "tagger", "pseudo_label", "ner", "evaluate"});
    const int version = j.value("schema_version", kPipelineSchemaVersion);
    if (version != kPipelineSchemaVersion)
      throw usage_error("unsupported config schema_version " + std::to_string(version));
    c.seed = j.value("seed", c.seed);

    const auto& p = section(j, "paths");
    check_keys(p, "paths", {"parallel", "source", "target", "target_dev", "target_test", "out"});
    c.paths.parallel = p.value("parallel", c.paths.parallel);
    c.paths.source = p.value("source", c.paths.source);
    c.paths.target = p.value("target", c.paths.target);
    c.paths.target_dev = p.value("target_dev", c.paths.target_dev);
    c.paths.target_test = p.value("target_test", c.paths.target_test);
    c.paths.out = p.value("out", c.paths.out);

    const auto& d = section(j, "data");
    check_keys(d, "data", {"types", "max_len", "regime", "few_shot_k", "low_resource_n"});
    if (d.contains("types")) {
      if (d.at("types").is_string() && d.at("types").get<std::string>() == "ontonotes")
        c.data.types = TypeRegistry::ontonotes().names();
      else
        c.data.types = d.at("types").get<std::vector<std::string>>();
    }
    c.data.max_len = d.value("max_len", c.data.max_len);
    if (d.contains("regime")) c.data.regime = parse_regime(d.at("regime").get<std::string>());
    c.data.few_shot_k = d.value("few_shot_k", c.data.few_shot_k);
    c.data.low_resource_n = d.value("low_resource_n", c.data.low_resource_n);

    const auto& s = section(j, "synth");
    check_keys(s, "synth",
               {"num_pairs", "num_source", "num_target", "num_target_dev", "num_target_test", "drop_probability",
                "lowercase_entity_probability", "pairs_with_gold_tags"});
    c.synth.num_pairs = s.value("num_pairs", c.synth.num_pairs);
    c.synth.num_source = s.value("num_source", c.synth.num_source);
    c.synth.num_target = s.value("num_target", c.synth.num_target);
    c.synth.num_target_dev = s.value("num_target_dev", c.synth.num_target_dev);
    c.synth.num_target_test = s.value("num_target_test", c.synth.num_target_test);
    c.synth.drop_probability = s.value("drop_probability", c.synth.drop_probability);
    c.synth.lowercase_entity_probability = s.value("lowercase_entity_probability", c.synth.lowercase_entity_probability);
    c.synth.pairs_with_gold_tags = s.value("pairs_with_gold_tags", c.synth.pairs_with_gold_tags);

    const auto& m = section(j, "model");
    check_keys(m, "model", {"embedding_dim", "init_scale", "tied_embeddings", "straight_through"});
    c.model = model_config_from_json(m);

    const auto& t = section(j, "train");
    check_keys(t, "train",
               {"optimizer", "epochs", "batch_size", "stage2_start", "tau", "train_discriminator_in_stage2",
                "warm_start_epochs", "warm_start_drop"});
    if (t.contains("optimizer")) c.train.optimizer = optimizer_from_json(t.at("optimizer"), c.train.optimizer);
    c.train.epochs = t.value("epochs", c.train.epochs);
    c.train.batch_size = t.value("batch_size", c.train.batch_size);
    if (t.contains("stage2_start") && !t.at("stage2_start").is_null())
      c.train.stage2_start = t.at("stage2_start").get<std::size_t>();
    c.train.tau = t.value("tau", c.train.tau);
    c.train.train_discriminator_in_stage2 = t.value("train_discriminator_in_stage2", c.train.train_discriminator_in_stage2);
    c.train.warm_start_epochs = t.value("warm_start_epochs", c.train.warm_start_epochs);
    c.train.warm_start_drop = t.value("warm_start_drop", c.train.warm_start_drop);

    const auto& lw = section(j, "loss_weights");
    check_keys(lw, "loss_weights", {"pg", "cr", "adv"});
    c.loss_weights.pg = lw.value("pg", c.loss_weights.pg);
    c.loss_weights.cr = lw.value("cr", c.loss_weights.cr);
    c.loss_weights.adv = lw.value("adv", c.loss_weights.adv);

    const auto& pf = section(j, "prefixes");
    check_keys(pf, "prefixes", {"source_to_target", "target_to_source"});
    c.prefixes = prefixes_from_json(pf);

    const auto& sm = section(j, "sampler");
    check_keys(sm, "sampler", {"top_k", "top_p", "temperature", "candidates", "max_len"});
    c.sampler.top_k = sm.value("top_k", c.sampler.top_k);
    c.sampler.top_p = sm.value("top_p", c.sampler.top_p);
    c.sampler.temperature = sm.value("temperature", c.sampler.temperature);
    c.candidates = sm.value("candidates", c.candidates);
    c.generate_max_len = sm.value("max_len", c.generate_max_len);

    const auto& sel = section(j, "selection");
    check_keys(sel, "selection", {"weights", "style_classifier", "bigram_k", "fluency_c"});
    const auto& sw = section(sel, "weights");
    check_keys(sw, "selection.weights", {"consistency", "adequacy", "fluency", "diversity"});
    auto& w = c.selection.weights;
    w.consistency = sw.value("consistency", w.consistency);
    w.adequacy = sw.value("adequacy", w.adequacy);
    w.fluency = sw.value("fluency", w.fluency);
    w.diversity = sw.value("diversity", w.diversity);
    const auto& sc = section(sel, "style_classifier");
    check_keys(sc, "selection.style_classifier", {"dim", "epochs", "batch_size", "learning_rate", "init_scale"});
    auto& st = c.selection.style;
    st.dim = sc.value("dim", st.dim);
    st.epochs = sc.value("epochs", st.epochs);
    st.batch_size = sc.value("batch_size", st.batch_size);
    st.learning_rate = sc.value("learning_rate", st.learning_rate);
    st.init_scale = sc.value("init_scale", st.init_scale);
    c.selection.bigram_k = sel.value("bigram_k", c.selection.bigram_k);
    c.selection.fluency_c = sel.value("fluency_c", c.selection.fluency_c);

    const auto& tg = section(j, "tagger");
    check_keys(tg, "tagger",
               {"embedding_dim", "hidden_dim", "window", "epochs", "batch_size", "min_count", "init_scale", "optimizer"});
    auto& tc = c.tagger;
    tc.embedding_dim = tg.value("embedding_dim", tc.embedding_dim);
    tc.hidden_dim = tg.value("hidden_dim", tc.hidden_dim);
    tc.window = tg.value("window", tc.window);
    tc.epochs = tg.value("epochs", tc.epochs);
    tc.batch_size = tg.value("batch_size", tc.batch_size);
    tc.min_count = tg.value("min_count", tc.min_count);
    tc.init_scale = tg.value("init_scale", tc.init_scale);
    if (tg.contains("optimizer")) tc.optimizer = optimizer_from_json(tg.at("optimizer"), tc.optimizer);

    const auto& pl = section(j, "pseudo_label");
    check_keys(pl, "pseudo_label", {"threshold", "tagger"});
    c.pseudo_label.threshold = pl.value("threshold", c.pseudo_label.threshold);
    c.pseudo_label.tagger = pl.value("tagger", c.pseudo_label.tagger);

    const auto& ner = section(j, "ner");
    check_keys(ner, "ner", {"selector"});
    c.ner.selector = ner.value("selector", c.ner.selector);

    const auto& ev = section(j, "evaluate");
    check_keys(ev, "evaluate", {"methods", "runs"});
    if (ev.contains("methods")) c.evaluate.methods = ev.at("methods").get<std::vector<std::string>>();
    if (ev.contains("runs")) c.evaluate.runs = ev.at("runs").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    throw usage_error(std::string("invalid config: ") + e.what());
  }
  return c;
}

PipelineConfig load_pipeline_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error("cannot open config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw usage_error("config " + path + " is not valid JSON: " + e.what());
  }
  return pipeline_config_from_json(j);
}

// ---------------------------------------------------------------------------
// Digests

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1)
    throw Error(ErrorCategory::kInternal, "SHA-256 computation failed");
  std::ostringstream out;
  for (unsigned int i = 0; i < len; ++i) out << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return out.str();
}

std::string file_sha256(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw io_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return sha256_hex(buf.str());
}

// ---------------------------------------------------------------------------
// Selectors

const std::vector<std::string>& known_selectors() {
  static const std::vector<std::string> s = {"S", "T", "S+T", "S->T", "P+T", "A+T"};
  return s;
}

std::string selector_slug(const std::string& selector) {
  if (selector == "S") return "source";
  if (selector == "T") return "target";
  if (selector == "S+T") return "source_target";
  if (selector == "S->T") return "source_then_target";
  if (selector == "P+T") return "pseudo_target";
  if (selector == "A+T") return "ada_target";
  throw usage_error("unknown training-set selector '" + selector + "' (expected S, T, S+T, S->T, P+T or A+T)");
}

// ---------------------------------------------------------------------------
// Command plumbing

namespace {

Error missing(const fs::path& path, const std::string& hint) {
  return Error(ErrorCategory::kMissingPrerequisite, "missing " + path.string() + "; " + hint);
}

void require(const fs::path& path, const std::string& hint) {
  if (!fs::exists(path)) throw missing(path, hint);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw io_error("cannot create directory " + dir.string() + ": " + ec.message());
}

TypeRegistry registry_of(const PipelineConfig& c) { return TypeRegistry(c.data.types); }

NerCorpus read_corpus(const fs::path& path, const PipelineConfig& c, Style style, bool allow_empty = false) {
  if (allow_empty && fs::exists(path) && fs::file_size(path) == 0) {
    NerCorpus empty;
    empty.style = style;
    empty.registry = registry_of(c);
    return empty;
  }
  return read_conll_file(path.string(), registry_of(c), {true, style});
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw io_error("cannot write " + path.string());
  out << text;
  if (!out) throw io_error("failed writing " + path.string());
}

std::string rel(const fs::path& p, const fs::path& root) {
  std::error_code ec;
  auto r = fs::relative(p, root, ec);
  if (ec || r.empty() || *r.begin() == "..") return p.generic_string();
  return r.generic_string();
}

CommandResult finish(const std::string& name, const PipelineConfig& config, CommandResult result,
                     std::ostream& log, const std::vector<fs::path>& unhashed = {}) {
  const RunLayout layout{config.paths.out};
  ensure_dir(layout.manifests());
  ojson m;
  m["command"] = name;
  m["schema_version"] = kPipelineSchemaVersion;
  m["config_sha256"] = sha256_hex(to_json(config).dump());
  m["seed"] = config.seed;
  ojson inputs = ojson::object(), outputs = ojson::object();
  for (const auto& p : result.inputs) inputs[rel(p, layout.root)] = file_sha256(p);
  for (const auto& p : result.outputs) outputs[rel(p, layout.root)] = file_sha256(p);
  m["inputs"] = inputs;
  m["outputs"] = outputs;
  ojson extra = ojson::array();
  for (const auto& p : unhashed) extra.push_back(rel(p, layout.root));
  m["unhashed"] = extra;
  m["stats"] = result.stats;
  std::string file = name;
  std::replace(file.begin(), file.end(), '/', '_');
  result.manifest = layout.manifests() / (file + ".json");
  write_text(result.manifest, m.dump(2) + "\n");
  log << "manifest: " << rel(result.manifest, layout.root) << "\n";
  return result;
}

fs::path input_path(const std::string& configured, const fs::path& fallback) {
  return configured.empty() ? fallback : fs::path(configured);
}

std::vector<std::vector<std::string>> token_lists(const NerCorpus& c) {
  std::vector<std::vector<std::string>> out;
  for (const auto& s : c.sentences) out.push_back(s.tokens);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

CommandResult cmd_synth(const PipelineConfig& config, std::ostream& log) {
  config.validate();
  const RunLayout layout{config.paths.out};
  ensure_dir(layout.data());
  SynthConfig sc = SynthConfig::defaults();
  sc.num_pairs = config.synth.num_pairs;
  sc.num_source = config.synth.num_source;
  sc.num_target = config.synth.num_target + config.synth.num_target_dev + config.synth.num_target_test;
  sc.drop_probability = config.synth.drop_probability;
  sc.lowercase_entity_probability = config.synth.lowercase_entity_probability;
  sc.pairs_with_gold_tags = config.synth.pairs_with_gold_tags;
  for (const auto& [type, _] : sc.lexicon)
    if (std::find(config.data.types.begin(), config.data.types.end(), type) == config.data.types.end())
      throw usage_error("synthetic data uses type " + type + ", which data.types does not register");
  SynthResult r = make_synthetic_style_corpus(sc, derive_seed(config.seed, "synth"));

  // Held-out target dev and test sets are random disjoint subsets.
  std::vector<std::size_t> order(r.target.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split(derive_seed(config.seed, "target_split"));
  split.shuffle(order);
  std::vector<int> part(r.target.size(), 0);
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < config.synth.num_target_test)
      part[order[i]] = 2;
    else if (i < config.synth.num_target_test + config.synth.num_target_dev)
      part[order[i]] = 1;
  }
  NerCorpus train = r.target, dev = r.target, test = r.target;
  train.sentences.clear();
  dev.sentences.clear();
  test.sentences.clear();
  for (std::size_t i = 0; i < r.target.size(); ++i)
    (part[i] == 0 ? train : part[i] == 1 ? dev : test).sentences.push_back(r.target.sentences[i]);
  const TypeRegistry reg = registry_of(config);
  for (NerCorpus* c : {&r.source, &train, &dev, &test}) c->registry = reg;

  CommandResult res;
  const auto files = {layout.data() / "parallel.jsonl", layout.data() / "source.conll", layout.data() / "target.conll",
                      layout.data() / "target_dev.conll", layout.data() / "target_test.conll"};
  auto it = files.begin();
  write_pairs_jsonl_file(r.pairs, (it++)->string());
  write_conll_file(r.source, (it++)->string());
  write_conll_file(train, (it++)->string());
  write_conll_file(dev, (it++)->string());
  write_conll_file(test, (it++)->string());
  res.outputs.assign(files.begin(), files.end());
  res.stats = {{"pairs", r.pairs.size()}, {"source", r.source.size()}, {"target", train.size()},
               {"target_dev", dev.size()}, {"target_test", test.size()}};
  log << "synth: " << r.pairs.size() << " pairs, " << r.source.size() << " source, " << train.size()
      << " target (+" << dev.size() << " dev, " << test.size() << " test)\n";
  return finish("synth", config, std::move(res), log);
}

CommandResult cmd_prepare(const PipelineConfig& config, std::ostream& log) {
  config.validate();
  const RunLayout layout{config.paths.out};
  const fs::path parallel = input_path(config.paths.parallel, layout.data() / "parallel.jsonl");
  const fs::path source = input_path(config.paths.source, layout.data() / "source.conll");
  const fs::path target = input_path(config.paths.target, layout.data() / "target.conll");
  const fs::path dev = input_path(config.paths.target_dev, layout.data() / "target_dev.conll");
  const fs::path test = input_path(config.paths.target_test, layout.data() / "target_test.conll");
  const std::string hint = "set paths in the config or run `synth` first";
  for (const auto& p : {parallel, source, target}) require(p, hint);

  auto pairs = read_pairs_jsonl_file(parallel.string());
  const TypeRegistry reg = registry_of(config);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    NerCorpus check;
    check.registry = reg;
    check.sentences = {pairs[i].source_side, pairs[i].target_side};
    try {
      validate_corpus(check);
    } catch (const Error& e) {
      throw format_error(parallel.string() + ": pair " + std::to_string(i) + ": " + e.what());
    }
  }
  NerCorpus src = read_corpus(source, config, Style::kSource);
  NerCorpus tgt = read_corpus(target, config, Style::kTarget);

  auto kept_pairs = filter_by_linearized_length(pairs, config.data.max_len);
  NerCorpus kept_src = filter_by_linearized_length(src, config.data.max_len);
  NerCorpus kept_tgt = filter_by_linearized_length(tgt, config.data.max_len);
  const std::size_t filtered_target = kept_tgt.size();

  const std::uint64_t regime_seed = derive_seed(config.seed, "regime");
  switch (config.data.regime) {
    case Regime::kFullSet:
      break;
    case Regime::kFewShot:
      kept_tgt = sample_few_shot(kept_tgt, {config.data.few_shot_k, regime_seed});
      break;
    case Regime::kLowResource:
      if (config.data.low_resource_n > kept_tgt.size())
        throw infeasible_error("low-resource regime asks for " + std::to_string(config.data.low_resource_n) +
                               " target sentences but only " + std::to_string(kept_tgt.size()) + " are available");
      kept_tgt = sample_low_resource(kept_tgt, config.data.low_resource_n, regime_seed);
      break;
  }

  ensure_dir(layout.prepared());
  CommandResult res;
  res.inputs = {parallel, source, target};
  const fs::path out_pairs = layout.prepared() / "parallel.jsonl";
  const fs::path out_src = layout.prepared() / "source.conll";
  const fs::path out_tgt = layout.prepared() / "target.conll";
  write_pairs_jsonl_file(kept_pairs, out_pairs.string());
  write_conll_file(kept_src, out_src.string());
  write_conll_file(kept_tgt, out_tgt.string());
  res.outputs = {out_pairs, out_src, out_tgt};

  auto write_linearized = [&](const NerCorpus& c, Direction d, const fs::path& path) {
    std::string text;
    for (const auto& s : c.sentences) text += render(linearize(s, config.prefixes.prefix(d))) + "\n";
    write_text(path, text);
    res.outputs.push_back(path);
  };
  write_linearized(kept_src, Direction::kSourceToTarget, layout.prepared() / "source.linearized.txt");
  write_linearized(kept_tgt, Direction::kTargetToSource, layout.prepared() / "target.linearized.txt");

  for (const auto& [from, name] : {std::pair{dev, "dev.conll"}, std::pair{test, "test.conll"}}) {
    if (!fs::exists(from)) continue;
    NerCorpus c = read_corpus(from, config, Style::kTarget);
    const fs::path to = layout.prepared() / name;
    write_conll_file(c, to.string());
    res.inputs.push_back(from);
    res.outputs.push_back(to);
  }

  res.stats = {{"parallel", {{"kept", kept_pairs.size()}, {"dropped", pairs.size() - kept_pairs.size()}}},
               {"source", {{"kept", kept_src.size()}, {"dropped", src.size() - kept_src.size()}}},
               {"target", {{"kept", filtered_target}, {"dropped", tgt.size() - filtered_target}}},
               {"regime", regime_name(config.data.regime)},
               {"target_after_regime", kept_tgt.size()}};
  log << "prepare: parallel kept " << kept_pairs.size() << " dropped " << pairs.size() - kept_pairs.size()
      << "; source kept " << kept_src.size() << " dropped " << src.size() - kept_src.size() << "; target kept "
      << filtered_target << " dropped " << tgt.size() - filtered_target << "; " << regime_name(config.data.regime)
      << " -> " << kept_tgt.size() << " target sentences\n";
  return finish("prepare", config, std::move(res), log);
}

CommandResult cmd_pseudo_label(const PipelineConfig& config, std::ostream& log) {
  config.validate();
  const RunLayout layout{config.paths.out};
  const fs::path ckpt = layout.ner(selector_slug(config.pseudo_label.tagger)) / "tagger.ckpt";
  const fs::path pairs_path = layout.prepared() / "parallel.jsonl";
  require(pairs_path, "run `prepare` first");
  require(ckpt, "run `train-ner --selector " + config.pseudo_label.tagger + "` first");
  TaggerModel tagger = load_tagger(ckpt.string());
  auto pairs = read_pairs_jsonl_file(pairs_path.string());
  PseudoLabelStats stats;
  auto labeled = pseudo_label(tagger, pairs, config.pseudo_label.threshold, &stats);
  const fs::path out = layout.prepared() / "parallel.labeled.jsonl";
  write_pairs_jsonl_file(labeled, out.string());
  CommandResult res;
  res.inputs = {pairs_path, ckpt};
  res.outputs = {out};
  res.stats = {{"pairs", stats.pairs},
               {"labeled", stats.labeled},
               {"labeled_fraction", stats.fraction()},
               {"threshold", config.pseudo_label.threshold}};
  log << "pseudo-label: " << stats.labeled << "/" << stats.pairs << " pairs labeled (" << std::fixed
      << std::setprecision(1) << 100.0 * stats.fraction() << "%) at threshold " << std::defaultfloat
      << config.pseudo_label.threshold << "\n";
  return finish("pseudo-label", config, std::move(res), log);
}

CommandResult cmd_train_transfer(const PipelineConfig& config, std::ostream& log) {
  config.validate();
  const RunLayout layout{config.paths.out};
  fs::path pairs_path = layout.prepared() / "parallel.labeled.jsonl";
  if (!fs::exists(pairs_path)) pairs_path = layout.prepared() / "parallel.jsonl";
  const fs::path src_path = layout.prepared() / "source.conll";
  const fs::path tgt_path = layout.prepared() / "target.conll";
  for (const auto& p : {pairs_path, src_path, tgt_path}) require(p, "run `prepare` first");
  auto pairs = read_pairs_jsonl_file(pairs_path.string());
  NerCorpus src = read_corpus(src_path, config, Style::kSource);
  NerCorpus tgt = read_corpus(tgt_path, config, Style::kTarget);

  TrainConfig tc = config.train;
  tc.seed = derive_seed(config.seed, "train_transfer");
  TrainResult r = run_training(pairs, src, tgt, config.model, tc, config.loss_weights, config.prefixes);

  ensure_dir(layout.transfer());
  const fs::path ckpt = layout.transfer() / "transfer.ckpt";
  const fs::path report = layout.transfer() / "report.jsonl";
  const fs::path timing = layout.transfer() / "timing.json";
  save_transfer_model(r.model, ckpt.string());
  r.report.checkpoint_path = rel(ckpt, layout.root);
  write_report_jsonl(r.report, report.string());
  write_text(timing, ojson{{"wall_seconds", r.report.wall_seconds}}.dump() + "\n");

  CommandResult res;
  res.inputs = {pairs_path, src_path, tgt_path};
  res.outputs = {ckpt, report};
  const double final_pg = r.report.epochs.empty() ? r.report.initial_pg : r.report.epochs.back().pg;
  res.stats = {{"pairs", pairs.size()},
               {"vocab_size", r.model.vocab.size()},
               {"epochs", r.report.epochs.size()},
               {"stage2_start", r.report.stage2_start},
               {"initial_pg", r.report.initial_pg},
               {"final_pg", final_pg}};
  log << "train-transfer: " << r.report.epochs.size() << " epochs (stage 2 from epoch " << r.report.stage2_start
      << "), vocab " << r.model.vocab.size() << ", L_pg " << r.report.initial_pg << " -> " << final_pg << " in "
      << std::fixed << std::setprecision(1) << r.report.wall_seconds << "s\n"
      << std::defaultfloat;
  return finish("train-transfer", config, std::move(res), log, {timing});
}

CommandResult cmd_generate(const PipelineConfig& config, std::ostream& log) {
  config.validate();
  const RunLayout layout{config.paths.out};
  const fs::path ckpt = layout.transfer() / "transfer.ckpt";
  const fs::path src_path = layout.prepared() / "source.conll";
  const fs::path tgt_path = layout.prepared() / "target.conll";
  const fs::path pairs_path = layout.prepared() / "parallel.jsonl";
  require(ckpt, "run `train-transfer` first");
  for (const auto& p : {src_path, tgt_path, pairs_path}) require(p, "run `prepare` first");
  TransferModel model = load_transfer_model(ckpt.string());
  NerCorpus src = read_corpus(src_path, config, Style::kSource);
  NerCorpus tgt = read_corpus(tgt_path, config, Style::kTarget);
  auto pairs = read_pairs_jsonl_file(pairs_path.string());

  auto source_texts = token_lists(src);
  auto target_texts = token_lists(tgt);
  for (const auto& p : pairs) {
    source_texts.push_back(p.source_side.tokens);
    target_texts.push_back(p.target_side.tokens);
  }
  StyleClassifier::Config sc = config.selection.style;
  sc.seed = derive_seed(config.seed, "style_classifier");
  auto classifier = std::make_shared<StyleClassifier>(StyleClassifier::train(source_texts, target_texts, sc));
  auto lm = std::make_shared<BigramLM>(BigramLM::fit(target_texts, config.selection.bigram_k));
  ScorerSet scorers{std::make_shared<ConsistencyScorer>(classifier), std::make_shared<AdequacyScorer>(),
                    std::make_shared<FluencyScorer>(lm, config.selection.fluency_c),
                    std::make_shared<DiversityScorer>()};

  AugmentOptions options;
  options.k = config.candidates;
  options.sampler = config.sampler;
  options.max_len = config.generate_max_len;
  options.seed = derive_seed(config.seed, "generate");
  AugmentResult r = augment_corpus(model, src, scorers, config.selection.weights, options);
  for (const auto& s : r.pseudo.sentences)
    if (auto v = bio_violation(s)) throw Error(ErrorCategory::kInternal, "generated sentence is not BIO-valid: " + *v);

  ensure_dir(layout.generate());
  const fs::path dump = layout.generate() / "candidates.jsonl";
  const fs::path pseudo = layout.generate() / "pseudo.conll";
  write_candidate_dump(r.dump, dump.string());
  write_conll_file(r.pseudo, pseudo.string());

  std::array<double, 4> mean{};
  for (const auto& rec : r.dump)
    if (rec.selected)
      for (std::size_t m = 0; m < 4; ++m) mean[m] += rec.scores[m];
  for (double& v : mean) v /= std::max<std::size_t>(1, r.pseudo.size());
  CommandResult res;
  res.inputs = {ckpt, src_path, tgt_path, pairs_path};
  res.outputs = {dump, pseudo};
  res.stats = {{"source_sentences", src.size()},
               {"candidates", r.dump.size()},
               {"selected", r.pseudo.size()},
               {"style_classifier_accuracy", classifier->accuracy(source_texts, target_texts)},
               {"selected_mean",
                {{"consistency", mean[0]}, {"adequacy", mean[1]}, {"fluency", mean[2]}, {"diversity", mean[3]}}}};
  log << "generate: " << r.dump.size() << " candidates for " << src.size() << " source sentences, " << r.pseudo.size()
      << " selected, all BIO-valid\n";
  return finish("generate", config, std::move(res), log);
}

CommandResult cmd_train_ner(const PipelineConfig& config, const std::string& selector, std::ostream& log) {
  config.validate();
  const std::string slug = selector_slug(selector);
  const RunLayout layout{config.paths.out};
  const fs::path src_path = layout.prepared() / "source.conll";
  const fs::path tgt_path = layout.prepared() / "target.conll";
  const fs::path dev_path = layout.prepared() / "dev.conll";
  const fs::path pseudo_path = layout.generate() / "pseudo.conll";
  const fs::path ada_path = layout.ada() / "ada.conll";

  CommandResult res;
  auto load = [&](const fs::path& p, Style style, const std::string& hint, bool allow_empty = false) {
    require(p, hint);
    res.inputs.push_back(p);
    return read_corpus(p, config, style, allow_empty);
  };
  auto concat = [](NerCorpus a, const NerCorpus& b) {
    a.sentences.insert(a.sentences.end(), b.sentences.begin(), b.sentences.end());
    return a;
  };

  TaggerConfig tc = config.tagger;
  tc.seed = derive_seed(config.seed, "train_ner");
  std::optional<NerCorpus> dev;
  if (fs::exists(dev_path)) {
    dev = read_corpus(dev_path, config, Style::kTarget);
    res.inputs.push_back(dev_path);
  }
  const NerCorpus* devp = dev ? &*dev : nullptr;
  const std::string prep_hint = "run `prepare` first";

  TaggerTrainResult trained;
  std::size_t train_size = 0;
  if (selector == "S->T") {
    NerCorpus s = load(src_path, Style::kSource, prep_hint);
    NerCorpus t = load(tgt_path, Style::kTarget, prep_hint);
    if (s.size() == 0 || t.size() == 0) throw usage_error("S->T needs non-empty source and target corpora");
    const NerCorpus* both[] = {&s, &t};
    trained.model = TaggerModel::random(tc, registry_of(config), build_tagger_vocab(both, tc.min_count));
    trained.phases.push_back(fit_tagger(trained.model, s, devp, "source", 0));
    trained.phases.push_back(fit_tagger(trained.model, t, devp, "target", 1));
    train_size = s.size() + t.size();
  } else {
    NerCorpus train;
    if (selector == "S") {
      train = load(src_path, Style::kSource, prep_hint);
    } else if (selector == "T") {
      train = load(tgt_path, Style::kTarget, prep_hint);
    } else if (selector == "S+T") {
      train = concat(load(src_path, Style::kSource, prep_hint), load(tgt_path, Style::kTarget, prep_hint));
    } else if (selector == "P+T") {
      train = concat(load(pseudo_path, Style::kTarget, "run `generate` first", true),
                     load(tgt_path, Style::kTarget, prep_hint));
    } else {  // A+T
      train = concat(load(ada_path, Style::kSource, "run `baseline-ada` first", true),
                     load(tgt_path, Style::kTarget, prep_hint));
    }
    if (train.size() == 0) throw usage_error("training set for selector " + selector + " is empty");
    trained = train_tagger(train, devp, tc);
    train_size = train.size();
  }

  const fs::path dir = layout.ner(slug);
  ensure_dir(dir);
  const fs::path ckpt = dir / "tagger.ckpt";
  const fs::path report = dir / "report.json";
  save_tagger(trained.model, ckpt.string());
  ojson phases = ojson::array();
  for (const auto& ph : trained.phases) {
    ojson epochs = ojson::array();
    for (const auto& e : ph.epochs) epochs.push_back({{"epoch", e.epoch}, {"loss", e.loss}, {"dev_f1", e.dev_f1}});
    phases.push_back({{"name", ph.name}, {"best_epoch", ph.best_epoch}, {"epochs", epochs}});
  }
  write_text(report, ojson{{"selector", selector}, {"train_sentences", train_size}, {"phases", phases}}.dump(2) + "\n");
  res.outputs = {ckpt, report};
  res.stats = {{"selector", selector}, {"train_sentences", train_size}, {"phases", trained.phases.size()}};
  log << "train-ner " << selector << ": " << train_size << " sentences, " << trained.phases.size() << " phase(s) -> "
      << rel(ckpt, layout.root) << "\n";
  return finish("train-ner/" + slug, config, std::move(res), log);
}

CommandResult cmd_evaluate(const PipelineConfig& config, std::ostream& log) {
  config.validate();
  const RunLayout layout{config.paths.out};
  const fs::path test_path = layout.prepared() / "test.conll";
  require(test_path, "provide paths.target_test and run `prepare`");
  NerCorpus test = read_corpus(test_path, config, Style::kTarget);

  std::vector<std::string> methods = config.evaluate.methods;
  if (methods.empty())
    for (const auto& s : known_selectors())
      if (fs::exists(layout.ner(selector_slug(s)) / "tagger.ckpt")) methods.push_back(s);
  if (methods.empty()) throw missing(layout.root / "ner", "run `train-ner` first");

  CommandResult res;
  res.inputs.push_back(test_path);
  ensure_dir(layout.eval() / "predictions");
  std::string results_text;
  std::string table = "| Method | Precision | Recall | Micro-F1 |\n|---|---|---|---|\n";
  ojson rows = ojson::array();
  auto fmt = [](double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << 100.0 * v;
    return s.str();
  };
  for (const auto& m : methods) {
    const std::string slug = selector_slug(m);
    const fs::path ckpt = layout.ner(slug) / "tagger.ckpt";
    require(ckpt, "run `train-ner --selector " + m + "` first");
    res.inputs.push_back(ckpt);
    TaggerModel tagger = load_tagger(ckpt.string());
    NerCorpus pred = predict_corpus(tagger, test);
    const fs::path pred_path = layout.eval() / "predictions" / (slug + ".conll");
    write_conll_file(pred, pred_path.string());
    res.outputs.push_back(pred_path);
    EvalResult e = micro_f1(test, pred);
    ojson row = {{"method", m},        {"slug", slug},           {"tp", e.tp},
                 {"fp", e.fp},         {"fn", e.fn},             {"precision", e.precision},
                 {"recall", e.recall}, {"micro_f1", e.micro_f1}};
    results_text += row.dump() + "\n";
    rows.push_back(row);
    table += "| " + m + " | " + fmt(e.precision) + " | " + fmt(e.recall) + " | " + fmt(e.micro_f1) + " |\n";
    log << "evaluate " << m << ": micro-F1 " << fmt(e.micro_f1) << " (tp " << e.tp << ", fp " << e.fp << ", fn " << e.fn
        << ")\n";
  }
  const fs::path results = layout.eval() / "results.jsonl";
  const fs::path table_path = layout.eval() / "table.md";
  write_text(results, results_text);
  write_text(table_path, table);
  res.outputs.push_back(results);
  res.outputs.push_back(table_path);
  res.stats = {{"test_sentences", test.size()}, {"results", rows}};

  if (!config.evaluate.runs.empty()) {
    // Mean micro-F1 per method over this run and the listed ones.
    std::map<std::string, std::vector<double>> scores;
    for (const auto& row : rows) scores[row["method"].get<std::string>()].push_back(row["micro_f1"].get<double>());
    for (const auto& run : config.evaluate.runs) {
      const fs::path p = fs::path(run) / "eval" / "results.jsonl";
      require(p, "evaluate run " + run + " first");
      res.inputs.push_back(p);
      std::ifstream in(p);
      std::string line;
      while (std::getline(in, line))
        if (!line.empty()) {
          auto j = nlohmann::json::parse(line);
          scores[j.at("method").get<std::string>()].push_back(j.at("micro_f1").get<double>());
        }
    }
    std::string summary = "| Method | Runs | Mean Micro-F1 |\n|---|---|---|\n";
    ojson srows = ojson::array();
    for (const auto& m : known_selectors()) {
      auto it = scores.find(m);
      if (it == scores.end()) continue;
      double mean = 0.0;
      for (double v : it->second) mean += v;
      mean /= static_cast<double>(it->second.size());
      summary += "| " + m + " | " + std::to_string(it->second.size()) + " | " + fmt(mean) + " |\n";
      srows.push_back({{"method", m}, {"runs", it->second.size()}, {"mean_micro_f1", mean}});
      log << "evaluate mean " << m << " over " << it->second.size() << " runs: " << fmt(mean) << "\n";
    }
    const fs::path summary_path = layout.eval() / "summary.md";
    write_text(summary_path, summary);
    res.outputs.push_back(summary_path);
    res.stats["summary"] = srows;
  }
  return finish("evaluate", config, std::move(res), log);
}

CommandResult cmd_baseline_ada(const PipelineConfig& config, std::ostream& log) {
  config.validate();
  const RunLayout layout{config.paths.out};
  const fs::path src_path = layout.prepared() / "source.conll";
  const fs::path tgt_path = layout.prepared() / "target.conll";
  for (const auto& p : {src_path, tgt_path}) require(p, "run `prepare` first");
  NerCorpus src = read_corpus(src_path, config, Style::kSource);
  NerCorpus tgt = read_corpus(tgt_path, config, Style::kTarget);
  NerCorpus ada = augment_entity_replacement(src, tgt, derive_seed(config.seed, "ada"));
  ensure_dir(layout.ada());
  const fs::path out = layout.ada() / "ada.conll";
  write_conll_file(ada, out.string());
  CommandResult res;
  res.inputs = {src_path, tgt_path};
  res.outputs = {out};
  res.stats = {{"sentences", ada.size()}};
  log << "baseline-ada: " << ada.size() << " sentences -> " << rel(out, layout.root) << "\n";
  return finish("baseline-ada", config, std::move(res), log);
}

}  // namespace stner
