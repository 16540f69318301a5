#include <CLI11.hpp>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <nlohmann/json.hpp>
#include <openssl/sha.h>

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "quantact/errors.hpp"
#include "quantact/experiments.hpp"
#include "quantact/report.hpp"

namespace fs = std::filesystem;
namespace pt = boost::property_tree;
using namespace quantact;

namespace {

struct flags {
    std::string config, out = "runs/latest", activation, loss;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> batch_size, eval_batch, tasks;
    std::vector<std::string> reports;
};

pt::ptree defaults() {
    pt::ptree t;
    t.put("run.seed", 0);
    t.put("data.root", "data");
    t.put("toy.activations", "relu,qact");
    t.put("toy.sandwich", "none");
    t.put("toy.steps", 4000);
    t.put("toy.batch_size", 256);
    t.put("toy.lr", 3e-3);
    t.put("toy.tasks", 200);
    t.put("toy.eval_batch", 512);
    t.put("toy.resample", true);
    t.put("toy.sigma", 0.1);
    t.put("train.activation", "relu");
    t.put("train.loss", "ce");
    t.put("train.sandwich", "full");
    t.put("train.batch_size", 128);
    t.put("train.lr", 1e-3);
    t.put("train.max_epochs", 20);
    t.put("train.steps_per_epoch", 0);
    t.put("train.train_limit", 0);
    t.put("train.val_limit", 0);
    t.put("train.patience", 3);
    t.put("train.eval_batch", 1024);
    t.put("eval.checkpoint", "");
    t.put("eval.eval_batch", 1024);
    t.put("eval.distortions", "gaussian_noise,impulse_noise,blur,contrast,brightness");
    t.put("eval.severities", "1,2,3,4,5");
    t.put("eval.test_limit", 0);
    t.put("eval.head_train_limit", 10000);
    t.put("eval.map_k", 10);
    t.put("eval.map_limit", 2000);
    t.put("eval.batch_sweep", "64,256,1024");
    t.put("eval.mnistc", "");
    return t;
}

void merge_into(pt::ptree& base, const pt::ptree& over) {
    for (const auto& [section, values] : over) {
        if (values.empty()) throw config_error("config: key '" + section + "' must be inside a [section]");
        for (const auto& [key, v] : values) {
            const std::string path = section + "." + key;
            if (!base.get_child_optional(path)) throw config_error("config: unknown key " + path);
            base.put(path, v.data());
        }
    }
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    for (std::string item; std::getline(ss, item, ',');) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

template <class T>
T get(const pt::ptree& t, const std::string& path) {
    try {
        return t.get<T>(path);
    } catch (const pt::ptree_error& e) {
        throw config_error("config: bad value for " + path + ": " + e.what());
    }
}

template <class T>
std::vector<T> get_list(const pt::ptree& t, const std::string& path) {
    std::vector<T> out;
    for (const auto& item : split_list(get<std::string>(t, path))) {
        try {
            if constexpr (std::is_same_v<T, int>) out.push_back(std::stoi(item));
            else out.push_back(static_cast<T>(std::stoull(item)));
        } catch (const std::exception&) {
            throw config_error("config: bad list entry '" + item + "' in " + path);
        }
    }
    return out;
}

sandwich_mode parse_sandwich(const std::string& s) {
    if (s == "full") return sandwich_mode::full;
    if (s == "after" || s == "after_only") return sandwich_mode::after_only;
    if (s == "none") return sandwich_mode::none;
    throw config_error("unknown sandwich mode '" + s + "' (expected full, after or none)");
}

std::string to_string(sandwich_mode s) {
    return s == sandwich_mode::full ? "full" : s == sandwich_mode::after_only ? "after" : "none";
}

// Defaults, then the config file, then flags.
pt::ptree resolve(const std::string& command, const flags& f) {
    auto t = defaults();
    if (!f.config.empty()) {
        pt::ptree file;
        try {
            pt::read_ini(f.config, file);
        } catch (const pt::ini_parser_error& e) {
            throw config_error(std::string("config: ") + e.what());
        }
        merge_into(t, file);
    }
    if (f.seed) t.put("run.seed", *f.seed);
    if (!f.activation.empty()) {
        parse_activation(f.activation);
        t.put(command == "toy" ? "toy.activations" : "train.activation", f.activation);
    }
    if (!f.loss.empty()) t.put("train.loss", to_string(parse_loss(f.loss)));
    if (f.batch_size) t.put(command == "toy" ? "toy.batch_size" : "train.batch_size", *f.batch_size);
    if (f.eval_batch) {
        t.put("toy.eval_batch", *f.eval_batch);
        t.put("eval.eval_batch", *f.eval_batch);
    }
    if (f.tasks) t.put("toy.tasks", *f.tasks);
    if (const char* env = std::getenv("QUANTACT_DATA")) t.put("data.root", env);
    return t;
}

std::string read_text(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw data_error("cannot read " + p.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_text(const fs::path& p, const std::string& s) {
    std::ofstream out(p, std::ios::binary);
    out << s;
    if (!out) throw data_error("cannot write " + p.string());
}

// Hash of the content as a git blob.
std::string blob_hash(const std::string& content) {
    const std::string blob = "blob " + std::to_string(content.size()) + '\0' + content;
    unsigned char digest[SHA_DIGEST_LENGTH];
    SHA1(reinterpret_cast<const unsigned char*>(blob.data()), blob.size(), digest);
    std::string hex;
    char buf[3];
    for (unsigned char b : digest) {
        std::snprintf(buf, sizeof buf, "%02x", b);
        hex += buf;
    }
    return hex;
}

// Writes config.ini and config.sha1 into the output directory; returns the hash.
std::string record_config(const pt::ptree& t, const fs::path& out) {
    fs::create_directories(out);
    std::ostringstream os;
    pt::write_ini(os, t);
    const auto text = os.str();
    const auto hash = blob_hash(text);
    write_text(out / "config.ini", text);
    write_text(out / "config.sha1", hash + "\n");
    return hash;
}

fs::path mnist_dir(const pt::ptree& t) {
    const fs::path root = get<std::string>(t, "data.root");
    try {
        return find_mnist(root);
    } catch (const data_error& e) {
        throw data_error(std::string(e.what()) + " (set QUANTACT_DATA or [data] root)");
    }
}

int cmd_toy(const pt::ptree& t, const fs::path& out) {
    const auto hash = record_config(t, out);
    nlohmann::json summary;
    summary["config_sha1"] = hash;
    std::ostringstream csv;
    csv.precision(10);
    csv << "activation,task,accuracy\n";
    std::vector<svg_histogram_series> hist;
    for (const auto& name : split_list(get<std::string>(t, "toy.activations"))) {
        toy_config cfg;
        cfg.activation = parse_activation(name);
        cfg.sandwich = parse_sandwich(get<std::string>(t, "toy.sandwich"));
        cfg.train_steps = get<std::size_t>(t, "toy.steps");
        cfg.batch_size = get<std::size_t>(t, "toy.batch_size");
        cfg.lr = get<double>(t, "toy.lr");
        cfg.tasks = get<std::size_t>(t, "toy.tasks");
        if (cfg.tasks > 1000) throw config_error("toy: at most 1000 tasks");
        cfg.eval_batch = get<std::size_t>(t, "toy.eval_batch");
        cfg.resample_tasks = get<bool>(t, "toy.resample");
        cfg.sigma = get<double>(t, "toy.sigma");
        cfg.seed = get<std::uint64_t>(t, "run.seed");
        const auto r = run_toy(cfg);
        std::cout << name << ": mean " << r.mean << " median " << r.median << '\n';
        summary["results"][name] = {{"mean", r.mean}, {"median", r.median}, {"final_loss", r.final_loss},
                                    {"accuracy", r.task_accuracy}};
        for (std::size_t i = 0; i < r.task_accuracy.size(); ++i) csv << name << ',' << i << ',' << r.task_accuracy[i] << '\n';
        hist.push_back({name, r.task_accuracy});
    }
    write_text(out / "toy_summary.json", summary.dump(2) + "\n");
    write_text(out / "toy_accuracy.csv", csv.str());
    write_text(out / "toy_histogram.svg", svg_histogram("Per-task accuracy", "accuracy", hist, 20, 0.0, 1.0));
    return 0;
}

activation_spec activation_of(const std::string& name, const std::string& sandwich) {
    activation_spec a;
    a.kind = parse_activation(name);
    a.sandwich = parse_sandwich(sandwich);
    return a;
}

int cmd_train(const pt::ptree& t, const fs::path& out) {
    const auto hash = record_config(t, out);
    const auto data = load_mnist(mnist_dir(t));
    train_config cfg;
    cfg.activation = activation_of(get<std::string>(t, "train.activation"), get<std::string>(t, "train.sandwich"));
    cfg.loss = parse_loss(get<std::string>(t, "train.loss"));
    cfg.batch_size = get<std::size_t>(t, "train.batch_size");
    cfg.lr = get<double>(t, "train.lr");
    cfg.max_epochs = get<std::size_t>(t, "train.max_epochs");
    cfg.steps_per_epoch = get<std::size_t>(t, "train.steps_per_epoch");
    cfg.train_limit = get<std::size_t>(t, "train.train_limit");
    cfg.val_limit = get<std::size_t>(t, "train.val_limit");
    cfg.early_stop_patience = get<int>(t, "train.patience");
    cfg.eval_batch = get<std::size_t>(t, "train.eval_batch");
    cfg.seed = get<std::uint64_t>(t, "run.seed");

    const auto run = train_model(data.train, cfg, [](const epoch_record& r) {
        std::cout << "epoch " << r.epoch << " loss " << r.train_loss << " val " << r.val_accuracy << " lr " << r.lr << '\n';
    });
    save_checkpoint(out / "model.ckpt", run.net.state());
    write_text(out / "train_log.csv", epoch_log_csv(run.log));
    const nlohmann::json meta{{"activation", to_string(cfg.activation.kind)},
                              {"sandwich", to_string(cfg.activation.sandwich)},
                              {"loss", to_string(cfg.loss)},
                              {"seed", cfg.seed},
                              {"best_epoch", run.best_epoch},
                              {"config_sha1", hash}};
    write_text(out / "model.json", meta.dump(2) + "\n");
    return 0;
}

int cmd_eval(const pt::ptree& t, const fs::path& out) {
    const auto hash = record_config(t, out);
    const fs::path ckpt_dir = get<std::string>(t, "eval.checkpoint").empty() ? out : fs::path(get<std::string>(t, "eval.checkpoint"));
    nlohmann::json meta;
    try {
        meta = nlohmann::json::parse(read_text(ckpt_dir / "model.json"));
    } catch (const nlohmann::json::exception& e) {
        throw data_error(std::string("model.json: ") + e.what());
    }
    auto spec = model_spec::lenet_plus(activation_of(meta.at("activation"), meta.at("sandwich")));
    spec.seed = meta.at("seed");
    model net(spec);
    net.load_state(load_checkpoint(ckpt_dir / "model.ckpt"));

    eval_config cfg;
    cfg.eval_batch = get<std::size_t>(t, "eval.eval_batch");
    cfg.distortions.clear();
    for (const auto& d : split_list(get<std::string>(t, "eval.distortions"))) cfg.distortions.push_back(parse_distortion(d));
    cfg.severities = get_list<int>(t, "eval.severities");
    cfg.test_limit = get<std::size_t>(t, "eval.test_limit");
    cfg.head_train_limit = get<std::size_t>(t, "eval.head_train_limit");
    cfg.map_k = get<std::size_t>(t, "eval.map_k");
    cfg.map_limit = get<std::size_t>(t, "eval.map_limit");
    cfg.batch_sweep = get_list<std::size_t>(t, "eval.batch_sweep");
    cfg.seed = get<std::uint64_t>(t, "run.seed");
    if (const auto m = get<std::string>(t, "eval.mnistc"); !m.empty()) cfg.mnistc_root = m;

    const auto data = load_mnist(mnist_dir(t));
    const auto report = evaluate_model(net, data, cfg);
    auto j = nlohmann::json::parse(report_to_json(report));
    j["config_sha1"] = hash;
    write_text(out / "report.json", j.dump(2) + "\n");
    write_text(out / "report.csv", report_to_csv(report));
    for (const auto& gap : report.gaps) std::cerr << "gap: " << gap << '\n';
    for (const auto& r : report.rows)
        std::cout << r.dataset << ' ' << r.severity << " acc " << r.accuracy << " ece " << r.ece_top_label << '\n';
    return 0;
}

int cmd_report(const flags& f, const fs::path& out) {
    if (f.reports.empty()) throw config_error("report: give at least one report path");
    std::vector<metrics_report> reports;
    for (fs::path p : f.reports) {
        if (fs::is_directory(p)) p /= "report.json";
        reports.push_back(report_from_json(read_text(p)));
    }
    const auto merged = merge_reports(reports);
    fs::create_directories(out);
    write_text(out / "merged.csv", merged_to_csv(merged));

    std::map<std::string, std::map<std::string, svg_series>> acc, ece_top;
    std::map<std::string, double> clean_acc, clean_ece, clean_acc_sd, clean_ece_sd;
    for (const auto& r : merged)
        if (r.dataset == "clean") {
            const auto key = r.activation + "/" + r.head;
            clean_acc[key] = r.accuracy.mean;
            clean_acc_sd[key] = r.accuracy.sd;
            clean_ece[key] = r.ece_top_label.mean;
            clean_ece_sd[key] = r.ece_top_label.sd;
        }
    for (const auto& r : merged) {
        if (r.dataset == "clean") continue;
        const auto key = r.activation + "/" + r.head;
        for (auto* m : {&acc, &ece_top}) {
            auto& s = (*m)[r.dataset][key];
            if (s.x.empty() && clean_acc.count(key)) {
                s.label = key;
                s.x.push_back(0);
                s.y.push_back(m == &acc ? clean_acc[key] : clean_ece[key]);
                s.err.push_back(m == &acc ? clean_acc_sd[key] : clean_ece_sd[key]);
            }
            s.label = key;
            s.x.push_back(r.severity);
            s.y.push_back(m == &acc ? r.accuracy.mean : r.ece_top_label.mean);
            s.err.push_back(m == &acc ? r.accuracy.sd : r.ece_top_label.sd);
        }
    }
    for (const auto& [dataset, series] : acc) {
        std::vector<svg_series> a, e;
        for (const auto& [k, s] : series) a.push_back(s);
        for (const auto& [k, s] : ece_top[dataset]) e.push_back(s);
        std::string safe = dataset;
        std::replace(safe.begin(), safe.end(), '/', '_');
        write_text(out / ("accuracy_" + safe + ".svg"), svg_line_plot(dataset, "severity", "accuracy", a));
        write_text(out / ("ece_" + safe + ".svg"), svg_line_plot(dataset, "severity", "top-label ECE", e));
    }
    std::cout << "merged " << reports.size() << " reports into " << merged.size() << " rows\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"quantile activation experiments"};
    app.require_subcommand(1);
    flags f;
    auto common = [&f](CLI::App* c) {
        c->add_option("--config", f.config, "INI config file")->check(CLI::ExistingFile);
        c->add_option("--seed", f.seed, "random seed");
        c->add_option("--out", f.out, "output directory");
        c->add_option("--activation", f.activation, "relu|prelu|selu|qact");
        c->add_option("--loss", f.loss, "ce|triplet|watershed");
        c->add_option("--batch-size", f.batch_size, "training batch size");
        c->add_option("--eval-batch", f.eval_batch, "inference context size");
        c->add_option("--tasks", f.tasks, "toy tasks");
    };
    auto* toy = app.add_subcommand("toy", "contradictory-label toy experiment");
    auto* train = app.add_subcommand("train", "train lenet_plus on MNIST");
    auto* eval = app.add_subcommand("eval", "evaluate a trained model on distorted MNIST");
    auto* report = app.add_subcommand("report", "merge metric reports");
    for (auto* c : {toy, train, eval, report}) common(c);
    report->add_option("reports", f.reports, "report.json files or run directories");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        const fs::path out = f.out;
        if (*report) return cmd_report(f, out);
        const std::string command = toy->parsed() ? "toy" : train->parsed() ? "train" : "eval";
        const auto t = resolve(command, f);
        if (*toy) return cmd_toy(t, out);
        if (*train) return cmd_train(t, out);
        return cmd_eval(t, out);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const divergence_error& e) {
        std::cerr << "diverged: " << e.what() << '\n';
        return 4;
    } catch (const data_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const format_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const report_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const std::filesystem::filesystem_error& e) {
        std::cerr << "data error: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
