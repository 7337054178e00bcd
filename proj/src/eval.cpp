#include "scd/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace scd {

using nlohmann::json;

void Confusion::add(int truth, Label predicted) {
  if (predicted == Label::Error) {
    ++(truth == 1 ? err_dep : err_ctl);
  } else if (truth == 1) {
    ++(predicted == Label::Depressed ? tp : fn);
  } else {
    ++(predicted == Label::Depressed ? fp : tn);
  }
}

Confusion& Confusion::operator+=(const Confusion& o) {
  tp += o.tp;
  fp += o.fp;
  fn += o.fn;
  tn += o.tn;
  err_dep += o.err_dep;
  err_ctl += o.err_ctl;
  return *this;
}

namespace {

double ratio(double a, double b) { return b > 0.0 ? a / b : 0.0; }

struct ClassScore {
  double precision, recall, f1;
  bool present;
};

ClassScore class_score(std::size_t hit, std::size_t predicted, std::size_t actual) {
  const double p = ratio(static_cast<double>(hit), static_cast<double>(predicted));
  const double r = ratio(static_cast<double>(hit), static_cast<double>(actual));
  return {p, r, ratio(2.0 * p * r, p + r), predicted + actual > 0};
}

}  // namespace

Metrics metrics(const Confusion& c) {
  if (c.total() == 0) throw std::invalid_argument("metrics: empty confusion");
  Metrics m;
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  const ClassScore dep = class_score(c.tp, c.tp + c.fp, c.tp + c.fn + c.err_dep);
  const ClassScore ctl = class_score(c.tn, c.tn + c.fn, c.tn + c.fp + c.err_ctl);
  m.pos_precision = dep.precision;
  m.pos_recall = dep.recall;
  m.pos_f1 = dep.f1;
  double n = 0.0;
  for (const ClassScore& s : {dep, ctl}) {
    if (!s.present) continue;
    m.precision += s.precision;
    m.recall += s.recall;
    m.f1 += s.f1;
    n += 1.0;
  }
  m.precision /= n;
  m.recall /= n;
  m.f1 /= n;
  return m;
}

Label vote(std::span<const Label> preds) {
  if (preds.empty()) throw std::invalid_argument("vote: no predictions");
  std::size_t dep = 0, valid = 0;
  for (Label l : preds) {
    if (l == Label::Error) continue;
    ++valid;
    dep += l == Label::Depressed;
  }
  if (valid == 0) return Label::Error;
  return 2 * dep > valid ? Label::Depressed : Label::NotDepressed;
}

std::string ModalityConfig::name() const {
  return std::string("T") + (audio ? "+A" : "") + (video ? "+V" : "");
}

ModalityConfig ModalityConfig::parse(std::string_view name) {
  for (bool a : {true, false})
    for (bool v : {true, false}) {
      ModalityConfig mc{a, v};
      if (mc.name() == name) return mc;
    }
  throw std::invalid_argument("unknown modality config '" + std::string(name) + "'");
}

EvalReport aggregate(std::vector<Prediction> predictions, const std::string& modality, const std::string& config_hash,
                     std::uint64_t seed) {
  EvalReport r;
  r.modality = modality;
  r.config_hash = config_hash;
  r.seed = seed;
  std::sort(predictions.begin(), predictions.end(), [](const Prediction& a, const Prediction& b) { return a.id < b.id; });
  std::map<std::pair<std::string, std::string>, ParticipantVote> groups;
  for (const Prediction& p : predictions) {
    for (const std::string& ds : {p.dataset, std::string("ALL")}) {
      DatasetResult& d = r.datasets[ds];
      d.segments.add(p.label, p.predicted);
      ++d.routing[p.path];
    }
    auto [it, fresh] = groups.try_emplace({p.dataset, p.participant_id});
    ParticipantVote& v = it->second;
    if (fresh) {
      v.participant_id = p.participant_id;
      v.dataset = p.dataset;
      v.label = p.label;
    } else if (v.label != p.label) {
      throw DataError("participant " + p.participant_id + " has segments with different labels");
    }
    v.segments.push_back(p.predicted);
  }
  for (auto& [key, v] : groups) {
    v.vote = vote(v.segments);
    r.datasets[v.dataset].participants.add(v.label, v.vote);
    r.datasets["ALL"].participants.add(v.label, v.vote);
    r.votes.push_back(std::move(v));
  }
  r.predictions = std::move(predictions);
  return r;
}

EvalReport evaluate(Model& m, const std::vector<Sample>& samples, const ModalityConfig& mc, std::uint64_t seed) {
  if (samples.empty()) throw DataError("evaluate: no samples");
  std::vector<Prepared> items = prepare_inputs(m, samples, !mc.audio, !mc.video);
  cache_features(m, items);
  std::vector<Prediction> preds;
  preds.reserve(items.size());
  for (const Prepared& p : items) preds.push_back(predict(m, p, seed));
  return aggregate(std::move(preds), mc.name(), config_hash(m.cfg), seed);
}

// --- serialization --------------------------------------------------------------

namespace {

Label label_from_name(const std::string& s) {
  for (Label l : {Label::NotDepressed, Label::Depressed, Label::Error})
    if (label_name(l) == s) return l;
  throw DataError("unknown label '" + s + "'");
}

PathChoice path_from_name(const std::string& s) {
  for (PathChoice p : {PathChoice::Fuse, PathChoice::BypassAudio, PathChoice::BypassVideo, PathChoice::TextOnly})
    if (path_name(p) == s) return p;
  throw DataError("unknown path '" + s + "'");
}

json confusion_json(const Confusion& c) {
  json j = {{"tp", c.tp}, {"fp", c.fp}, {"fn", c.fn}, {"tn", c.tn}, {"err_dep", c.err_dep}, {"err_ctl", c.err_ctl}};
  if (c.total() > 0) {
    const Metrics m = metrics(c);
    j["metrics"] = {{"accuracy", m.accuracy},           {"precision", m.precision},   {"recall", m.recall},
                    {"f1", m.f1},                       {"pos_precision", m.pos_precision},
                    {"pos_recall", m.pos_recall},       {"pos_f1", m.pos_f1}};
  }
  return j;
}

Confusion confusion_from_json(const json& j) {
  Confusion c;
  c.tp = j.at("tp").get<std::size_t>();
  c.fp = j.at("fp").get<std::size_t>();
  c.fn = j.at("fn").get<std::size_t>();
  c.tn = j.at("tn").get<std::size_t>();
  c.err_dep = j.at("err_dep").get<std::size_t>();
  c.err_ctl = j.at("err_ctl").get<std::size_t>();
  return c;
}

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string fixed(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

std::vector<const EvalReport*> ordered(const std::vector<EvalReport>& reports) {
  std::vector<const EvalReport*> out;
  for (const auto& r : reports) out.push_back(&r);
  std::stable_sort(out.begin(), out.end(), [](const EvalReport* a, const EvalReport* b) { return a->modality < b->modality; });
  return out;
}

}  // namespace

json to_json(const EvalReport& r) {
  json datasets = json::object();
  for (const auto& [name, d] : r.datasets) {
    json routing = json::object();
    for (PathChoice p : {PathChoice::Fuse, PathChoice::BypassAudio, PathChoice::BypassVideo, PathChoice::TextOnly})
      routing[std::string(path_name(p))] = d.routing[p];
    datasets[name] = {{"segments", confusion_json(d.segments)},
                      {"participants", confusion_json(d.participants)},
                      {"routing", std::move(routing)}};
  }
  json preds = json::array();
  for (const Prediction& p : r.predictions) {
    preds.push_back({{"id", p.id},
                     {"participant_id", p.participant_id},
                     {"dataset", p.dataset},
                     {"label", p.label},
                     {"path", path_name(p.path)},
                     {"response", p.response},
                     {"predicted", label_name(p.predicted)}});
  }
  json votes = json::array();
  for (const ParticipantVote& v : r.votes) {
    json segs = json::array();
    for (Label l : v.segments) segs.push_back(label_name(l));
    votes.push_back({{"participant_id", v.participant_id},
                     {"dataset", v.dataset},
                     {"label", v.label},
                     {"vote", label_name(v.vote)},
                     {"segments", std::move(segs)}});
  }
  return {{"modality", r.modality},
          {"config_hash", r.config_hash},
          {"seed", r.seed},
          {"datasets", std::move(datasets)},
          {"predictions", std::move(preds)},
          {"votes", std::move(votes)}};
}

EvalReport report_from_json(const json& j) {
  EvalReport r;
  try {
    r.modality = j.at("modality").get<std::string>();
    r.config_hash = j.at("config_hash").get<std::string>();
    r.seed = j.at("seed").get<std::uint64_t>();
    for (auto it = j.at("datasets").begin(); it != j.at("datasets").end(); ++it) {
      DatasetResult d;
      d.segments = confusion_from_json(it->at("segments"));
      d.participants = confusion_from_json(it->at("participants"));
      for (auto rt = it->at("routing").begin(); rt != it->at("routing").end(); ++rt)
        d.routing[path_from_name(rt.key())] = rt->get<std::size_t>();
      r.datasets[it.key()] = d;
    }
    for (const json& p : j.at("predictions")) {
      Prediction x;
      x.id = p.at("id").get<std::string>();
      x.participant_id = p.at("participant_id").get<std::string>();
      x.dataset = p.at("dataset").get<std::string>();
      x.label = p.at("label").get<int>();
      x.path = path_from_name(p.at("path").get<std::string>());
      x.response = p.at("response").get<std::string>();
      x.predicted = label_from_name(p.at("predicted").get<std::string>());
      r.predictions.push_back(std::move(x));
    }
    for (const json& v : j.at("votes")) {
      ParticipantVote x;
      x.participant_id = v.at("participant_id").get<std::string>();
      x.dataset = v.at("dataset").get<std::string>();
      x.label = v.at("label").get<int>();
      x.vote = label_from_name(v.at("vote").get<std::string>());
      for (const json& s : v.at("segments")) x.segments.push_back(label_from_name(s.get<std::string>()));
      r.votes.push_back(std::move(x));
    }
  } catch (const json::exception& e) {
    throw DataError(std::string("eval report: ") + e.what());
  }
  return r;
}

std::string report_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream out;
  out << "modality,dataset,level,n,errors,accuracy,precision,recall,f1,pos_precision,pos_recall,pos_f1\n";
  for (const EvalReport* r : ordered(reports)) {
    for (const auto& [name, d] : r->datasets) {
      for (const auto& [level, c] : {std::pair{"participant", &d.participants}, std::pair{"segment", &d.segments}}) {
        if (c->total() == 0) continue;
        const Metrics m = metrics(*c);
        out << r->modality << ',' << name << ',' << level << ',' << c->total() << ',' << c->error_count() << ','
            << num(m.accuracy) << ',' << num(m.precision) << ',' << num(m.recall) << ',' << num(m.f1) << ','
            << num(m.pos_precision) << ',' << num(m.pos_recall) << ',' << num(m.pos_f1) << '\n';
      }
    }
  }
  return out.str();
}

std::string report_markdown(const std::vector<EvalReport>& reports) {
  const auto rs = ordered(reports);
  std::set<std::string> names;
  for (const EvalReport* r : rs)
    for (const auto& [name, d] : r->datasets) names.insert(name);
  std::ostringstream out;
  for (const auto& [title, participant] : {std::pair{"Participant level", true}, std::pair{"Segment level", false}}) {
    out << "## " << title << " (accuracy / macro F1)\n\n| dataset |";
    for (const EvalReport* r : rs) out << ' ' << r->modality << " |";
    out << "\n|---|";
    for (std::size_t i = 0; i < rs.size(); ++i) out << "---|";
    out << '\n';
    for (const std::string& name : names) {
      out << "| " << name << " |";
      for (const EvalReport* r : rs) {
        auto it = r->datasets.find(name);
        const Confusion* c = it == r->datasets.end() ? nullptr : participant ? &it->second.participants : &it->second.segments;
        if (c == nullptr || c->total() == 0) {
          out << " - |";
          continue;
        }
        const Metrics m = metrics(*c);
        out << ' ' << fixed(m.accuracy) << " / " << fixed(m.f1) << " |";
      }
      out << '\n';
    }
    out << '\n';
  }
  return out.str();
}

void write_reports(const std::vector<EvalReport>& reports, const std::filesystem::path& dir) {
  if (reports.empty()) throw DataError("report: no evaluation reports given");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  json all = json::array();
  for (const EvalReport* r : ordered(reports)) all.push_back(to_json(*r));
  const std::pair<const char*, std::string> files[] = {
      {"report.json", json{{"reports", std::move(all)}}.dump(2) + "\n"},
      {"report.csv", report_csv(reports)},
      {"report.md", report_markdown(reports)}};
  for (const auto& [name, body] : files) {
    std::ofstream out(dir / name, std::ios::binary);
    out << body;
    if (!out) throw DataError("cannot write " + (dir / name).string());
  }
}

}  // namespace scd
