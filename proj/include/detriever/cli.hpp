#pragma once

// Command-line front end: validate, synth, label, train, index, retrieve, eval
// and sweep. Every RunConfig field can come from a JSON --config file and is
// overridden by the matching --flag (snake_case key, kebab-case flag).

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "detriever/detail/binary_io.hpp"
#include "detriever/detail/random.hpp"
#include "detriever/detriever.hpp"

namespace detriever::cli {

inline constexpr const char* kOutputDirEnv = "DETRIEVER_OUTPUT_DIR";

struct RunConfig {
    std::uint64_t seed = 0;
    std::string output_dir;

    std::string train_container;
    std::string dev_container;
    std::string labels;
    std::string checkpoint;
    std::string index;
    std::string queries;
    std::string clusters;

    std::size_t hidden_dim = 1024;
    std::size_t embed_dim = 512;
    std::string pooling = "eos";
    std::string activation = "relu";

    std::string target_mode = "problem_plus_query";
    std::string target_pooling = "eos";
    std::int64_t target_layer = -1;  // -1: middle kept layer
    std::string proxy_similarity = "dot";
    std::size_t n_pos = 40;
    std::size_t n_neg = 100;
    std::string negative_sampling = "uniform";
    bool allow_corpus_limited = false;

    double temperature = 0.07;
    std::size_t batch_size = 64;
    std::size_t total_steps = 10000;
    std::size_t checkpoint_every = 1000;
    bool normalize_embeddings = true;
    double lr = 1e-4;
    double weight_decay = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double epsilon = 1e-8;

    std::string similarity = "cosine";
    std::string filter = "ood";
    std::size_t k = 1;
    bool layer_sweep = false;

    std::size_t synth_clusters = 5;
    std::size_t synth_train_per_cluster = 40;
    std::size_t synth_dev_queries = 200;
    std::size_t synth_dim = 32;
    std::string synth_layers = "0,5,10,15,20";
    std::size_t synth_informative_layer = 10;
    double synth_snr = 10.0;
    double synth_distractor_scale = 3.0;
    std::size_t synth_schemas = 8;

    std::string sweep_param = "n_pos";
    std::string sweep_values = "40";
};

namespace detail {

using nlohmann::json;
using nlohmann::ordered_json;

struct Field {
    std::string key;
    std::string help;
    std::function<void(RunConfig&, const std::string&)> from_string;
    std::function<void(RunConfig&, const json&)> from_json;
    std::function<ordered_json(const RunConfig&)> to_json;
    bool is_flag = false;  // boolean switch
};

template <typename T>
T parse_scalar(const std::string& key, const std::string& text) {
    std::istringstream in(text);
    T v{};
    if constexpr (std::is_same_v<T, bool>) {
        if (text.empty() || text == "true" || text == "1") return true;
        if (text == "false" || text == "0") return false;
        throw ConfigError("--" + key + ": expected true|false, got '" + text + "'");
    } else if constexpr (std::is_same_v<T, std::string>) {
        return text;
    } else {
        if (std::is_unsigned_v<T> && !text.empty() && text[0] == '-') {
            throw ConfigError(key + ": expected a non-negative value, got '" + text + "'");
        }
        in >> v;
        if (in.fail() || !in.eof()) throw ConfigError(key + ": cannot parse '" + text + "'");
        return v;
    }
}

template <typename T>
Field field(std::string key, T RunConfig::*member, std::string help) {
    Field f;
    f.key = key;
    f.help = std::move(help);
    f.is_flag = std::is_same_v<T, bool>;
    f.from_string = [key, member](RunConfig& c, const std::string& s) { c.*member = parse_scalar<T>(key, s); };
    f.from_json = [key, member](RunConfig& c, const json& j) {
        try {
            c.*member = j.get<T>();
        } catch (const json::exception&) {
            throw ConfigError("config key '" + key + "' has the wrong type");
        }
    };
    f.to_json = [member](const RunConfig& c) { return ordered_json(c.*member); };
    return f;
}

inline const std::vector<Field>& fields() {
    static const std::vector<Field> all = {
        field("seed", &RunConfig::seed, "top-level seed; label/init/shuffle/synth seeds derive from it"),
        field("output_dir", &RunConfig::output_dir, "output directory (default $DETRIEVER_OUTPUT_DIR or ./detriever-out)"),
        field("train_container", &RunConfig::train_container, "training/candidate container (.dtrv)"),
        field("dev_container", &RunConfig::dev_container, "dev/query container for eval and sweep"),
        field("labels", &RunConfig::labels, "label file (JSON)"),
        field("checkpoint", &RunConfig::checkpoint, "model checkpoint (.dtrm)"),
        field("index", &RunConfig::index, "retrieval index (.dtri)"),
        field("queries", &RunConfig::queries, "query container for retrieve"),
        field("clusters", &RunConfig::clusters, "id<TAB>cluster map for cluster-recall"),
        field("hidden_dim", &RunConfig::hidden_dim, "MLP hidden width"),
        field("embed_dim", &RunConfig::embed_dim, "retrieval embedding size"),
        field("pooling", &RunConfig::pooling, "model input pooling: mean|eos"),
        field("activation", &RunConfig::activation, "MLP activation: relu|gelu"),
        field("target_mode", &RunConfig::target_mode, "proxy target: problem_plus_query|query_only"),
        field("target_pooling", &RunConfig::target_pooling, "proxy target pooling: mean|eos"),
        field("target_layer", &RunConfig::target_layer, "proxy target layer id (-1: middle kept layer)"),
        field("proxy_similarity", &RunConfig::proxy_similarity, "proxy score: dot|cosine"),
        field("n_pos", &RunConfig::n_pos, "positives per anchor"),
        field("n_neg", &RunConfig::n_neg, "negatives per anchor"),
        field("negative_sampling", &RunConfig::negative_sampling, "uniform|hard"),
        field("allow_corpus_limited", &RunConfig::allow_corpus_limited, "truncate lists on small corpora"),
        field("temperature", &RunConfig::temperature, "contrastive temperature"),
        field("batch_size", &RunConfig::batch_size, "anchors per step"),
        field("total_steps", &RunConfig::total_steps, "optimizer steps"),
        field("checkpoint_every", &RunConfig::checkpoint_every, "checkpoint interval in steps"),
        field("normalize_embeddings", &RunConfig::normalize_embeddings, "L2-normalize before the loss dot product"),
        field("lr", &RunConfig::lr, "AdamW learning rate"),
        field("weight_decay", &RunConfig::weight_decay, "AdamW decoupled weight decay"),
        field("beta1", &RunConfig::beta1, "AdamW beta1"),
        field("beta2", &RunConfig::beta2, "AdamW beta2"),
        field("epsilon", &RunConfig::epsilon, "AdamW epsilon"),
        field("similarity", &RunConfig::similarity, "retrieval scoring: cosine|dot"),
        field("filter", &RunConfig::filter, "candidate filter per query: ood|id|none"),
        field("k", &RunConfig::k, "number of demonstrations to retrieve"),
        field("layer_sweep", &RunConfig::layer_sweep, "eval: per-layer raw-state sweep instead of a checkpoint"),
        field("synth_clusters", &RunConfig::synth_clusters, "synthetic clusters"),
        field("synth_train_per_cluster", &RunConfig::synth_train_per_cluster, "synthetic train examples per cluster"),
        field("synth_dev_queries", &RunConfig::synth_dev_queries, "synthetic dev queries"),
        field("synth_dim", &RunConfig::synth_dim, "synthetic hidden size"),
        field("synth_layers", &RunConfig::synth_layers, "synthetic kept layer ids, comma separated"),
        field("synth_informative_layer", &RunConfig::synth_informative_layer, "layer id carrying the cluster signal"),
        field("synth_snr", &RunConfig::synth_snr, "signal-to-noise ratio of the informative layer"),
        field("synth_distractor_scale", &RunConfig::synth_distractor_scale, "scale of the noise layers"),
        field("synth_schemas", &RunConfig::synth_schemas, "number of schema ids"),
        field("sweep_param", &RunConfig::sweep_param, "sweep parameter: n_pos|batch_size|target_mode"),
        field("sweep_values", &RunConfig::sweep_values, "comma-separated sweep values"),
    };
    return all;
}

inline std::string kebab(std::string s) {
    std::replace(s.begin(), s.end(), '_', '-');
    return s;
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, ',')) {
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

inline void apply_config_file(RunConfig& cfg, const std::string& path) {
    json j;
    try {
        j = json::parse(::detriever::detail::read_file(path));
    } catch (const json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
    if (!j.is_object()) throw ConfigError(path + ": config must be a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        auto f = std::find_if(fields().begin(), fields().end(), [&](const Field& x) { return x.key == it.key(); });
        if (f == fields().end()) throw ConfigError(path + ": unknown config key '" + it.key() + "'");
        f->from_json(cfg, it.value());
    }
}

inline ordered_json to_json(const RunConfig& cfg) {
    ordered_json j;
    for (const auto& f : fields()) j[f.key] = f.to_json(cfg);
    return j;
}

inline const std::string& require_path(const std::string& value, const char* key) {
    if (value.empty()) throw ConfigError("--" + kebab(key) + " is required");
    return value;
}

inline ModelConfig model_config(const RunConfig& c, const ContainerHeader& h) {
    ModelConfig m;
    m.input_dim = h.dim;
    m.hidden_dim = c.hidden_dim;
    m.embed_dim = c.embed_dim;
    m.layer_ids = h.layer_ids;
    m.pooling = parse_pooling(c.pooling);
    m.activation = parse_activation(c.activation);
    m.seed = ::detriever::detail::derive_seed(c.seed, "init");
    return m;
}

inline ProxyConfig proxy_config(const RunConfig& c) {
    ProxyConfig p;
    p.target_mode = parse_target_kind(c.target_mode);
    p.target_pooling = parse_pooling(c.target_pooling);
    if (c.target_layer >= 0) {
        if (c.target_layer > 0xffff) throw ConfigError("target_layer out of range");
        p.target_layer = static_cast<std::uint16_t>(c.target_layer);
    }
    p.similarity = parse_similarity(c.proxy_similarity);
    p.n_pos = c.n_pos;
    p.n_neg = c.n_neg;
    p.negative_sampling = parse_negative_sampling(c.negative_sampling);
    p.allow_corpus_limited = c.allow_corpus_limited;
    p.seed = ::detriever::detail::derive_seed(c.seed, "label");
    return p;
}

inline TrainConfig train_config(const RunConfig& c, const std::string& checkpoint_dir) {
    TrainConfig t;
    t.temperature = c.temperature;
    t.batch_size = c.batch_size;
    t.total_steps = c.total_steps;
    t.checkpoint_every = c.checkpoint_every;
    t.normalize_embeddings = c.normalize_embeddings;
    t.optimizer = {c.lr, c.weight_decay, c.beta1, c.beta2, c.epsilon};
    t.seed = ::detriever::detail::derive_seed(c.seed, "train");
    t.checkpoint_dir = checkpoint_dir;
    return t;
}

inline EvalOptions eval_options(const RunConfig& c) {
    EvalOptions e;
    e.proxy = proxy_config(c);
    e.k = c.k;
    e.filter = parse_filter_mode(c.filter);
    e.similarity = parse_similarity(c.similarity);
    return e;
}

inline SyntheticSpec synthetic_spec(const RunConfig& c) {
    SyntheticSpec s;
    s.clusters = c.synth_clusters;
    s.train_per_cluster = c.synth_train_per_cluster;
    s.dev_queries = c.synth_dev_queries;
    s.dim = c.synth_dim;
    s.layer_ids.clear();
    for (const auto& v : split_list(c.synth_layers)) s.layer_ids.push_back(parse_scalar<std::uint16_t>("synth_layers", v));
    if (c.synth_informative_layer > 0xffff) throw ConfigError("synth_informative_layer out of range");
    s.informative_layer = static_cast<std::uint16_t>(c.synth_informative_layer);
    s.snr = c.synth_snr;
    s.distractor_scale = c.synth_distractor_scale;
    s.schemas = c.synth_schemas;
    s.seed = ::detriever::detail::derive_seed(c.seed, "synth");
    return s;
}

inline std::string clusters_tsv(const ClusterMap& m) {
    std::string out;
    for (const auto& [id, k] : m) out += id + '\t' + std::to_string(k) + '\n';
    return out;
}

inline ClusterMap read_clusters(const std::string& path) {
    ClusterMap m;
    std::istringstream in(::detriever::detail::read_file(path));
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string::npos) throw ParseError(path + ":" + std::to_string(lineno) + ": expected id<TAB>cluster");
        m[line.substr(0, tab)] = parse_scalar<std::size_t>("cluster", line.substr(tab + 1));
    }
    return m;
}

inline std::string summarize(const HiddenStateContainer& c) {
    const auto& h = c.header();
    std::string layers;
    for (std::size_t i = 0; i < h.layer_ids.size(); ++i) layers += (i ? "," : "") + std::to_string(h.layer_ids[i]);
    std::string pooling = std::string(h.has_pooling(Pooling::mean) ? "mean" : "") +
                          (h.pooling_mask == kPoolingAll ? "," : "") + (h.has_pooling(Pooling::eos) ? "eos" : "");
    std::string targets = h.target_mask == 0 ? "none"
                          : h.target_mask == kTargetAll
                              ? "problem_plus_query,query_only"
                              : std::string(to_string(static_cast<TargetKind>(h.target_mask)));
    return "records=" + std::to_string(c.size()) + " dim=" + std::to_string(h.dim) + " layers=" + layers +
           " pooling=" + pooling + " targets=" + targets;
}

} // namespace detail

struct Streams {
    std::ostream& out;
    std::ostream& err;
};

inline void write_text(const std::filesystem::path& p, const std::string& text) {
    ::detriever::detail::write_file(p.string(), text);
}

inline std::filesystem::path prepare_output_dir(RunConfig& cfg) {
    if (cfg.output_dir.empty()) {
        const char* env = std::getenv(kOutputDirEnv);
        cfg.output_dir = env && *env ? env : "detriever-out";
    }
    std::error_code ec;
    std::filesystem::create_directories(cfg.output_dir, ec);
    if (ec) throw IoError("cannot create output directory '" + cfg.output_dir + "': " + ec.message());
    return cfg.output_dir;
}

inline void cmd_validate(const std::vector<std::string>& paths, Streams io) {
    if (paths.empty()) throw ConfigError("validate needs at least one file");
    for (const auto& p : paths) {
        const auto bytes = ::detriever::detail::read_file(p);
        const auto magic = std::string_view(bytes).substr(0, 4);
        if (magic == "DTRM") {
            auto ck = decode_checkpoint(bytes, p);
            const auto& c = ck.model.config();
            io.out << p << ": checkpoint step=" << ck.step << " dim=" << c.input_dim << " hidden=" << c.hidden_dim
                   << " embed=" << c.embed_dim << " layers=" << c.num_layers() << " pooling=" << to_string(c.pooling)
                   << '\n';
        } else if (magic == "DTRI") {
            auto idx = decode_index(bytes, p);
            io.out << p << ": index rows=" << idx.size() << " dim=" << idx.embeddings.cols
                   << " similarity=" << to_string(idx.similarity) << '\n';
        } else if (!bytes.empty() && bytes.front() == '{') {
            auto ls = decode_label_set(bytes, p);
            io.out << p << ": labels anchors=" << ls.anchors.size() << " n_pos=" << ls.config.n_pos
                   << " n_neg=" << ls.config.n_neg << '\n';
        } else {
            auto c = decode_container(bytes, p);
            io.out << p << ": " << detail::summarize(c) << '\n';
        }
    }
}

inline void cmd_synth(RunConfig& cfg, Streams io) {
    auto dir = prepare_output_dir(cfg);
    auto data = generate_synthetic(detail::synthetic_spec(cfg));
    write_container(data.train, (dir / "train.dtrv").string());
    write_container(data.dev, (dir / "dev.dtrv").string());
    write_text(dir / "clusters.tsv", detail::clusters_tsv(data.clusters));
    io.out << "wrote " << (dir / "train.dtrv").string() << " (" << data.train.size() << " records), "
           << (dir / "dev.dtrv").string() << " (" << data.dev.size() << " records)\n";
}

inline void cmd_label(RunConfig& cfg, Streams io) {
    const auto train = read_container(detail::require_path(cfg.train_container, "train_container"));
    auto dir = prepare_output_dir(cfg);
    auto labels = build_label_set(train, detail::proxy_config(cfg));
    const auto out = (dir / "labels.json").string();
    write_label_set(labels, out);
    io.out << "wrote " << out << " (" << labels.anchors.size() << " anchors"
           << (labels.corpus_limited ? ", corpus-limited" : "") << ")\n";
}

inline void cmd_train(RunConfig& cfg, Streams io) {
    const auto labels = read_label_set(detail::require_path(cfg.labels, "labels"));
    const auto train = read_container(detail::require_path(cfg.train_container, "train_container"));
    auto dir = prepare_output_dir(cfg);
    std::ofstream log(dir / "train.log");
    if (!log) throw IoError("cannot open '" + (dir / "train.log").string() + "'");
    auto report = train_loop(init_model(detail::model_config(cfg, train.header())), train, labels,
                             detail::train_config(cfg, (dir / "checkpoints").string()), &log);
    for (const auto& w : report.warnings) io.err << "warning: " << w << '\n';
    io.out << "trained " << report.final_step << " steps, loss " << report.losses.front() << " -> "
           << report.losses.back() << ", final checkpoint " << report.checkpoints.back().second << '\n';
}

inline void cmd_index(RunConfig& cfg, Streams io) {
    const auto ck = load_checkpoint(detail::require_path(cfg.checkpoint, "checkpoint"));
    const auto train = read_container(detail::require_path(cfg.train_container, "train_container"));
    auto dir = prepare_output_dir(cfg);
    auto idx = build_index(ck.model, train, parse_similarity(cfg.similarity));
    const auto out = (dir / "index.dtri").string();
    save_index(idx, out);
    io.out << "wrote " << out << " (" << idx.size() << " rows)\n";
}

inline void cmd_retrieve(RunConfig& cfg, Streams io) {
    const auto idx = load_index(detail::require_path(cfg.index, "index"));
    const auto ck = load_checkpoint(detail::require_path(cfg.checkpoint, "checkpoint"));
    const auto queries = read_container(detail::require_path(cfg.queries, "queries"));
    if (idx.model_digest != 0 && idx.model_digest != ck.model.config().digest()) {
        throw CompatibilityError("index was built with a different model architecture");
    }
    check_compatible(ck.model, queries.header());
    auto dir = prepare_output_dir(cfg);
    const auto mode = parse_filter_mode(cfg.filter);
    std::string table = "query_id\trank\tid\tscore\n";
    for (const auto& q : queries.records()) {
        auto res = retrieve(idx, embed(ck.model, q), cfg.k, RetrievalFilter::for_mode(mode, q.schema_id, q.id), q.id);
        for (std::size_t r = 0; r < res.hits.size(); ++r) {
            table += q.id + '\t' + std::to_string(r + 1) + '\t' + res.hits[r].id + '\t' +
                     format_metric(res.hits[r].score) + '\n';
        }
    }
    write_text(dir / "retrieval.tsv", table);
    io.out << table;
}

inline void cmd_eval(RunConfig& cfg, Streams io) {
    const auto train = read_container(detail::require_path(cfg.train_container, "train_container"));
    const auto dev = read_container(detail::require_path(cfg.dev_container, "dev_container"));
    ClusterMap clusters;
    auto opt = detail::eval_options(cfg);
    if (!cfg.clusters.empty()) {
        clusters = detail::read_clusters(cfg.clusters);
        opt.clusters = &clusters;
    }
    auto dir = prepare_output_dir(cfg);
    if (cfg.layer_sweep) {
        auto table = layer_sweep(train, dev, parse_pooling(cfg.pooling), opt);
        nlohmann::ordered_json j = nlohmann::ordered_json::array();
        for (const auto& m : table) j.push_back(metrics_json(m));
        write_text(dir / "layer_sweep.tsv", metrics_tsv(table));
        write_text(dir / "layer_sweep.json", j.dump(2) + "\n");
        io.out << metrics_tsv(table) << "best_layer=" << best_layer(table) << '\n';
        return;
    }
    const auto ck = load_checkpoint(detail::require_path(cfg.checkpoint, "checkpoint"));
    auto m = evaluate_retriever(ck.model, train, dev, opt);
    write_text(dir / "metrics.tsv", metrics_tsv(std::span<const EvalMetrics>(&m, 1)));
    write_text(dir / "metrics.json", metrics_json(m).dump(2) + "\n");
    io.out << metrics_tsv(std::span<const EvalMetrics>(&m, 1));
}

inline void cmd_sweep(RunConfig& cfg, Streams io) {
    const auto train = read_container(detail::require_path(cfg.train_container, "train_container"));
    const auto dev = read_container(detail::require_path(cfg.dev_container, "dev_container"));
    const auto param = parse_sweep_parameter(cfg.sweep_param);
    const auto values = detail::split_list(cfg.sweep_values);
    ClusterMap clusters;
    SweepBase base{detail::model_config(cfg, train.header()), detail::proxy_config(cfg), detail::train_config(cfg, {}),
                   detail::eval_options(cfg)};
    if (!cfg.clusters.empty()) {
        clusters = detail::read_clusters(cfg.clusters);
        base.eval.clusters = &clusters;
    }
    auto dir = prepare_output_dir(cfg);
    auto rows = sweep_driver(param, values, base, train, dev);
    write_text(dir / "sweep.tsv", sweep_tsv(param, rows));
    write_text(dir / "sweep_timing.tsv", sweep_tsv(param, rows, true));
    io.out << sweep_tsv(param, rows, true);
}

// Returns the process exit status: 0 success, 1 runtime/validation failure,
// 2 usage error. Failures print one "error: <kind>: <message>" line.
inline int run(const std::vector<std::string>& args, Streams io = {std::cout, std::cerr}) {
    CLI::App app{"Layer-weighted hidden-state retriever for in-context demonstration selection", "detriever"};
    app.require_subcommand(1);
    app.fallthrough();

    std::string config_path;
    app.add_option("--config", config_path, "JSON config file; explicit flags override its values");
    std::vector<std::pair<const detail::Field*, std::string>> raw(detail::fields().size());
    std::vector<CLI::Option*> opts;
    for (std::size_t i = 0; i < detail::fields().size(); ++i) {
        const auto& f = detail::fields()[i];
        raw[i].first = &f;
        auto* opt = app.add_option("--" + detail::kebab(f.key), raw[i].second, f.help);
        opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
        if (f.is_flag) opt->expected(0, 1);
        opts.push_back(opt);
    }

    std::vector<std::string> validate_paths;
    auto* validate = app.add_subcommand("validate", "check container, checkpoint, index or label files");
    validate->add_option("paths", validate_paths, "files to validate")->required();
    auto* synth = app.add_subcommand("synth", "generate planted-cluster synthetic train/dev containers");
    auto* label = app.add_subcommand("label", "assign proxy positives/negatives per anchor");
    auto* train = app.add_subcommand("train", "contrastive training with periodic checkpoints");
    auto* index = app.add_subcommand("index", "embed a candidate container into a retrieval index");
    auto* retrieve_cmd = app.add_subcommand("retrieve", "top-k demonstrations for each query record");
    auto* eval = app.add_subcommand("eval", "proxy-alignment metrics or a per-layer sweep");
    auto* sweep = app.add_subcommand("sweep", "label+train+eval once per value of one hyperparameter");

    std::vector<char*> argv;
    std::string prog = "detriever";
    argv.push_back(prog.data());
    std::vector<std::string> copy = args;
    for (auto& a : copy) argv.push_back(a.data());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::CallForHelp& e) {
        io.out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp& e) {
        io.out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        io.err << "error: usage: " << e.what() << '\n';
        return 2;
    }

    try {
        RunConfig cfg;
        if (!config_path.empty()) detail::apply_config_file(cfg, config_path);
        for (std::size_t i = 0; i < raw.size(); ++i) {
            if (opts[i]->count() > 0) raw[i].first->from_string(cfg, raw[i].second);
        }
        if (validate->parsed()) {
            cmd_validate(validate_paths, io);
            return 0;
        }
        const char* name = nullptr;
        if (synth->parsed()) {
            name = "synth";
            cmd_synth(cfg, io);
        } else if (label->parsed()) {
            name = "label";
            cmd_label(cfg, io);
        } else if (train->parsed()) {
            name = "train";
            cmd_train(cfg, io);
        } else if (index->parsed()) {
            name = "index";
            cmd_index(cfg, io);
        } else if (retrieve_cmd->parsed()) {
            name = "retrieve";
            cmd_retrieve(cfg, io);
        } else if (eval->parsed()) {
            name = "eval";
            cmd_eval(cfg, io);
        } else if (sweep->parsed()) {
            name = "sweep";
            cmd_sweep(cfg, io);
        }
        write_text(std::filesystem::path(cfg.output_dir) / (std::string(name) + "_config.json"),
                   detail::to_json(cfg).dump(2) + "\n");
        return 0;
    } catch (const Error& e) {
        std::string msg = e.what();
        std::replace(msg.begin(), msg.end(), '\n', ' ');
        io.err << "error: " << e.kind() << ": " << msg << '\n';
        return 1;
    } catch (const std::filesystem::filesystem_error& e) {
        io.err << "error: io: " << e.what() << '\n';
        return 1;
    }
}

} // namespace detriever::cli
