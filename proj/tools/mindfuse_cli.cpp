// mindfuse: batch driver for the pipeline. Every subcommand works offline
// against the mock provider; `serve` exposes the same store over HTTP.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mindfuse/creative_optimizer.hpp"
#include "mindfuse/http_provider.hpp"
#include "mindfuse/image.hpp"
#include "mindfuse/service.hpp"
#include "mindfuse/telemetry.hpp"
#include "mindfuse/workspace.hpp"

#ifndef MINDFUSE_DEFAULT_TEMPLATES_DIR
#define MINDFUSE_DEFAULT_TEMPLATES_DIR "templates"
#endif

namespace fs = std::filesystem;
using nlohmann::json;
using namespace mindfuse;

namespace {

enum class Format { kText, kJson, kCsv };

struct Globals {
  std::string config;
  std::string store;
  std::string templates;
  std::string output = "text";
  std::string now;
  unsigned threads = 1;

  Format format() const {
    if (output == "json") return Format::kJson;
    if (output == "csv") return Format::kCsv;
    return Format::kText;
  }
};

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

llm::GatewayConfig load_config(const Globals& g) {
  if (g.config.empty()) return {};
  auto c = llm::GatewayConfig::load(g.config);
  if (!c.fixtures_dir.empty() && c.fixtures_dir.is_relative()) {
    c.fixtures_dir = fs::path(g.config).parent_path() / c.fixtures_dir;
  }
  return c;
}

std::unique_ptr<Workspace> open_workspace(const Globals& g) {
  const auto config = load_config(g);
  WorkspaceOptions opts;
  opts.threads = g.threads;
  opts.max_retries = config.max_retries;
  const std::string now = g.now.empty() ? env_or("MINDFUSE_NOW", "") : g.now;
  if (!now.empty()) opts.clock = [now] { return now; };
  return std::make_unique<Workspace>(g.store, llm::TemplateRegistry::load_dir(g.templates),
                                     llm::make_chat_provider(config),
                                     llm::make_embedding_provider(config), opts);
}

void print_json(const json& j) { std::cout << j.dump(2) << "\n"; }

std::string short_text(const std::string& s, std::size_t n = 72) {
  return s.size() <= n ? s : s.substr(0, n - 3) + "...";
}

void print_archetypes(const MiningResult& r, Format f) {
  if (f == Format::kJson) {
    print_json(to_json(r));
    return;
  }
  if (f == Format::kCsv) {
    std::cout << "id,name,size,auto_labeled,exemplars\n";
    for (const auto& a : r.archetypes) {
      std::cout << a.id << "," << csv::escape(a.name) << "," << a.size << ","
                << (a.auto_labeled ? "true" : "false") << ","
                << csv::escape(text::join(a.exemplar_ad_ids, ";")) << "\n";
    }
    return;
  }
  std::cout << r.archetypes.size() << " " << to_string(r.kind) << (r.archetypes.size() == 1 ? "" : "s")
            << " (seed " << r.clustering.seed << ", BIC "
            << (r.clustering.bic_degenerate ? std::string("degenerate") : numeric::fixed(r.clustering.bic, 3))
            << ")\n";
  for (const auto& a : r.archetypes) {
    std::cout << "  " << a.id << "  [" << a.size << "]  " << a.name << "\n";
    if (!a.description.empty()) std::cout << "      " << short_text(a.description) << "\n";
  }
}

void print_brief(const CampaignBrief& b, Format f) {
  if (f == Format::kJson) {
    print_json(to_json(b));
    return;
  }
  std::cout << "BRIEF " << b.brief_id << "  (" << b.persona_ref << " x " << b.challenge_ref << " x "
            << b.offering_ref << ")\n";
  std::cout << "STORY\n" << b.story << "\nINSIGHT\n" << b.insight << "\nIDEA\n" << b.idea << "\n\n";
}

FilterSpec filter_from_flags(const std::vector<std::string>& brands,
                             const std::vector<std::string>& any,
                             const std::vector<std::string>& all, const std::string& from,
                             const std::string& to) {
  FilterSpec f;
  if (!brands.empty()) f.brands = brands;
  if (!any.empty()) f.keyword_any = any;
  if (!all.empty()) f.keyword_all = all;
  if (!from.empty() || !to.empty()) {
    auto a = Date::parse(from);
    auto b = Date::parse(to);
    if (!a || !b) throw Error(ErrorCode::kInvalidArgument, "--from and --to must both be YYYY-MM-DD");
    f.date_range = std::make_pair(*a, *b);
  }
  f.validate();
  return f;
}

std::map<std::string, std::string> load_labels(const std::string& path) {
  std::map<std::string, std::string> labels;
  if (path.empty()) return labels;
  auto j = json::parse(read_text(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::kInvalidArgument, "labels must be a JSON object");
  for (auto& [k, v] : j.items()) labels[k] = v.get<std::string>();
  return labels;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mindfuse: ad-corpus insight mining, campaign briefs, creative ablation and telemetry analysis"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  g.store = env_or("MINDFUSE_STORE", "mindfuse-store");
  g.templates = env_or("MINDFUSE_TEMPLATES", MINDFUSE_DEFAULT_TEMPLATES_DIR);
  app.add_option("--config", g.config, "Gateway config file (JSON)")->check(CLI::ExistingFile);
  app.add_option("--store", g.store, "Store directory")->capture_default_str();
  app.add_option("--templates", g.templates, "Prompt template directory")->capture_default_str();
  app.add_option("--output", g.output, "Output format")
      ->check(CLI::IsMember({"text", "json", "csv"}))
      ->capture_default_str();
  app.add_option("--now", g.now, "Fixed timestamp for created_at fields (else MINDFUSE_NOW or the clock)");
  app.add_option("--threads", g.threads, "Worker threads for batch steps")->check(CLI::Range(1u, 64u));

  // ingest
  auto* ingest = app.add_subcommand("ingest", "Ingest a line-delimited ad export");
  std::string ingest_file;
  std::string ingest_brand;
  ingest->add_option("file", ingest_file, "Export file")->required()->check(CLI::ExistingFile);
  ingest->add_option("--brand", ingest_brand, "Brand for records that lack one");

  // pillars
  auto* pillars = app.add_subcommand("pillars", "Extract content pillars for the filtered ads");
  std::vector<std::string> f_brands, f_any, f_all;
  std::string f_from, f_to;
  for (auto* sc : {pillars}) {
    sc->add_option("--brand", f_brands, "Brand filter (repeatable)");
    sc->add_option("--keyword", f_any, "Match any of these keywords (repeatable)");
    sc->add_option("--keyword-all", f_all, "Match all of these keywords (repeatable)");
    sc->add_option("--from", f_from, "Active on or after YYYY-MM-DD");
    sc->add_option("--to", f_to, "Active on or before YYYY-MM-DD");
  }

  // personas / challenges
  std::uint64_t seed = 0;
  std::size_t k_min = 1;
  std::optional<std::size_t> k_max;
  auto* personas = app.add_subcommand("personas", "Cluster audiences into personas");
  auto* challenges = app.add_subcommand("challenges", "Cluster insights into challenge themes");
  for (auto* sc : {personas, challenges}) {
    sc->add_option("--seed", seed, "Clustering seed")->required();
    sc->add_option("--k-min", k_min, "Smallest k")->check(CLI::PositiveNumber);
    sc->add_option("--k-max", k_max, "Largest k (default min(20, sqrt(n)))");
  }

  // gaps
  auto* gaps = app.add_subcommand("gaps", "Coverage matrix and least-covered persona x challenge cells");
  std::size_t top = 5;
  gaps->add_option("--top", top, "Number of gaps")->capture_default_str();

  // offerings
  auto* offering = app.add_subcommand("offering", "Manage offerings");
  offering->require_subcommand(1);
  auto* offering_add = offering->add_subcommand("add", "Add an offering");
  Offering new_offering;
  offering_add->add_option("--name", new_offering.name, "Name")->required();
  offering_add->add_option("--description", new_offering.description, "Description");
  offering_add->add_option("--brand", new_offering.brand, "Brand");
  offering_add->add_option("--id", new_offering.offering_id, "Explicit id");
  auto* offering_list = offering->add_subcommand("list", "List offerings");

  // briefs
  auto* brief = app.add_subcommand("brief", "Generate campaign briefs");
  std::string persona_id, challenge_id, offering_id;
  std::size_t from_gaps = 0;
  std::size_t fanout = 1;
  auto* o_persona = brief->add_option("--persona", persona_id, "Persona id");
  auto* o_challenge = brief->add_option("--challenge", challenge_id, "Challenge id");
  auto* o_offering = brief->add_option("--offering", offering_id, "Offering id");
  auto* o_gaps = brief->add_option("--from-gaps", from_gaps, "One brief for each of the top N gaps");
  brief->add_option("--fanout", fanout, "Offerings per gap with --from-gaps")->check(CLI::PositiveNumber);
  o_persona->needs(o_challenge, o_offering);
  o_gaps->excludes(o_persona, o_challenge, o_offering);
  auto* briefs_list = app.add_subcommand("briefs", "List stored briefs");

  // telemetry
  auto* telemetry = app.add_subcommand("telemetry", "Campaign telemetry");
  telemetry->require_subcommand(1);
  auto* t_import = telemetry->add_subcommand("import", "Import a telemetry CSV");
  std::string telemetry_file;
  t_import->add_option("file", telemetry_file, "CSV file")->required()->check(CLI::ExistingFile);
  std::string granularity = "weekly";
  auto* t_series = telemetry->add_subcommand("series", "Metric trend series");
  auto* t_ranges = telemetry->add_subcommand("ranges", "Min and max of each metric");
  auto* t_analyze = telemetry->add_subcommand("analyze", "Build the analysis prompt (and optionally call the model)");
  std::vector<std::string> range_metrics{"cpr", "spend", "ctr", "cpm"};
  t_ranges->add_option("--metric", range_metrics, "Metrics (repeatable)");
  std::string creatives_dir;
  bool call_model = false;
  std::string prompt_out;
  t_analyze->add_option("--creatives", creatives_dir, "Directory of creative images (default: store creatives/)");
  t_analyze->add_flag("--call-model", call_model, "Send the prompt and parse recommended actions");
  t_analyze->add_option("--prompt-out", prompt_out, "Also write the prompt text to this file");
  for (auto* sc : {t_series, t_ranges, t_analyze}) {
    sc->add_option("--granularity", granularity, "weekly, daily or creative")
        ->check(CLI::IsMember({"weekly", "daily", "creative"}))
        ->capture_default_str();
  }

  // heatmaps
  auto* heatmap = app.add_subcommand("heatmap", "Attention heatmaps");
  heatmap->require_subcommand(1);
  std::string heatmap_file;
  double threshold = 0.6;
  std::size_t max_variants = 3;
  std::string labels_file;
  auto* h_regions = heatmap->add_subcommand("regions", "Rank salient regions");
  auto* h_plan = heatmap->add_subcommand("plan", "Cumulative ablation plan");
  for (auto* sc : {h_regions, h_plan}) {
    sc->add_option("file", heatmap_file, "Heatmap JSON")->required()->check(CLI::ExistingFile);
    sc->add_option("--threshold", threshold, "Cell threshold in (0, 1)")->capture_default_str();
  }
  h_plan->add_option("--max-variants", max_variants, "Variant cap")->capture_default_str();
  h_plan->add_option("--labels", labels_file, "JSON object mapping region id to element label");

  // ablation
  auto* ablation = app.add_subcommand("ablation", "Ablation reports");
  ablation->require_subcommand(1);
  auto* a_report = ablation->add_subcommand("report", "Degradation report of variants against the original");
  std::string orig_csv, variants_csv;
  a_report->add_option("original", orig_csv, "Original stats CSV")->required()->check(CLI::ExistingFile);
  a_report->add_option("variants", variants_csv, "Variant stats CSV")->required()->check(CLI::ExistingFile);

  // serve
  auto* serve = app.add_subcommand("serve", "Serve the store over HTTP");
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string token = env_or("MINDFUSE_TOKEN", "");
  std::string cors = "*";
  unsigned workers = 2;
  serve->add_option("--host", host)->capture_default_str();
  serve->add_option("--port", port)->capture_default_str();
  serve->add_option("--token", token, "Static bearer token (else MINDFUSE_TOKEN)");
  serve->add_option("--cors-origin", cors, "Allowed console origin")->capture_default_str();
  serve->add_option("--workers", workers, "Job worker threads")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "usage error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  const auto fmt = g.format();
  try {
    if (*ingest) {
      auto ws = open_workspace(g);
      std::ifstream in(ingest_file);
      auto report = ws->ingest(in, ingest_brand.empty() ? std::nullopt : std::optional(ingest_brand));
      if (fmt == Format::kJson) {
        print_json(to_json(report));
      } else {
        std::cout << "read " << report.read << ", accepted " << report.accepted << ", duplicates "
                  << report.duplicates << ", rejected " << report.rejected << "\n";
        for (const auto& [line, reason] : report.reject_reasons) {
          std::cerr << "  line " << line << ": " << reason << "\n";
        }
        for (const auto& [line, w] : report.warnings) std::cerr << "  line " << line << ": " << w << "\n";
      }
    } else if (*pillars) {
      auto ws = open_workspace(g);
      auto table = ws->run_pillars(filter_from_flags(f_brands, f_any, f_all, f_from, f_to));
      if (fmt == Format::kJson) {
        print_json(to_json(table));
      } else if (fmt == Format::kCsv) {
        std::cout << "ad_id,audience,insight,need,product,value_proposition,emotional_appeal,tone,archetype\n";
        for (const auto& r : table.rows) {
          std::cout << text::join({csv::escape(r.ad_id), csv::escape(r.audience), csv::escape(r.insight),
                                   csv::escape(r.need), csv::escape(r.product),
                                   csv::escape(r.value_proposition), csv::escape(r.emotional_appeal),
                                   csv::escape(r.tone), csv::escape(r.archetype)},
                                  ",")
                    << "\n";
        }
      } else {
        std::cout << table.rows.size() << " ads extracted, " << table.failures.size() << " failed\n";
        for (const auto& f : table.failures) std::cerr << "  " << f.ad_id << ": " << f.reason << "\n";
      }
    } else if (*personas || *challenges) {
      auto ws = open_workspace(g);
      MiningOptions opts{seed, k_min, k_max};
      auto r = ws->run_mining(*personas ? ArchetypeKind::kPersona : ArchetypeKind::kChallenge, opts);
      print_archetypes(r, fmt);
    } else if (*gaps) {
      auto ws = open_workspace(g);
      auto r = ws->gaps(top);
      if (fmt == Format::kJson) {
        print_json(to_json(r));
      } else if (fmt == Format::kCsv) {
        std::cout << "rank,persona,challenge,count\n";
        for (const auto& gp : r.gaps) {
          std::cout << gp.rank << "," << gp.persona << "," << gp.challenge << "," << gp.count << "\n";
        }
      } else {
        std::cout << "coverage over " << r.matrix.common_ads << " ads";
        if (r.matrix.persona_only || r.matrix.challenge_only) {
          std::cout << " (" << r.matrix.persona_only << " persona-only, " << r.matrix.challenge_only
                    << " challenge-only)";
        }
        std::cout << "\n";
        for (const auto& gp : r.gaps) {
          std::cout << "  #" << gp.rank << "  " << gp.persona << " x " << gp.challenge << "  " << gp.count << "\n";
        }
      }
    } else if (*offering_add) {
      auto ws = open_workspace(g);
      auto o = ws->add_offering(new_offering);
      if (fmt == Format::kJson) {
        print_json(to_json(o));
      } else {
        std::cout << o.offering_id << "\n";
      }
    } else if (*offering_list) {
      auto ws = open_workspace(g);
      json out = json::array();
      for (const auto& o : ws->offerings()) {
        if (fmt == Format::kJson) {
          out.push_back(to_json(o));
        } else {
          std::cout << o.offering_id << "  " << o.name << (o.brand.empty() ? "" : " (" + o.brand + ")") << "\n";
        }
      }
      if (fmt == Format::kJson) print_json(out);
    } else if (*brief) {
      if (from_gaps == 0 && persona_id.empty()) {
        std::cerr << "usage error: brief needs --persona/--challenge/--offering or --from-gaps N\n\n"
                  << brief->help();
        return 2;
      }
      auto ws = open_workspace(g);
      std::vector<CampaignBrief> out;
      if (from_gaps > 0) {
        out = ws->briefs_from_gaps(from_gaps, fanout);
      } else {
        out.push_back(ws->brief(persona_id, challenge_id, offering_id));
      }
      if (fmt == Format::kJson) {
        json arr = json::array();
        for (const auto& b : out) arr.push_back(to_json(b));
        print_json(from_gaps > 0 ? arr : arr.front());
      } else {
        for (const auto& b : out) print_brief(b, fmt);
      }
    } else if (*briefs_list) {
      auto ws = open_workspace(g);
      json arr = json::array();
      for (const auto& b : ws->briefs()) {
        if (fmt == Format::kJson) {
          arr.push_back(to_json(b));
        } else {
          print_brief(b, fmt);
        }
      }
      if (fmt == Format::kJson) print_json(arr);
    } else if (*t_import) {
      auto ws = open_workspace(g);
      std::ifstream in(telemetry_file);
      const auto n = ws->import_telemetry(in);
      if (fmt == Format::kJson) {
        print_json({{"rows", n}});
      } else {
        std::cout << "imported " << n << " rows\n";
      }
    } else if (*t_series) {
      auto ws = open_workspace(g);
      auto s = ws->trend(parse_granularity(granularity));
      if (fmt == Format::kJson) {
        print_json(to_json(s));
      } else {
        std::cout << render_data_table(s) << "\n";
      }
    } else if (*t_ranges) {
      auto ws = open_workspace(g);
      auto ranges = summarize_ranges(ws->trend(parse_granularity(granularity)), range_metrics);
      if (fmt == Format::kJson) {
        json out = json::object();
        for (const auto& [m, r] : ranges) out[m] = {{"min", r.first}, {"max", r.second}};
        print_json(out);
      } else {
        std::cout << "metric,min,max\n";
        for (const auto& m : range_metrics) {
          const auto& r = ranges.at(m);
          const int digits = (m == "ctr" || m.rfind("cr_", 0) == 0) ? 6 : 2;
          std::cout << m << "," << numeric::fixed(r.first, digits) << "," << numeric::fixed(r.second, digits) << "\n";
        }
      }
    } else if (*t_analyze) {
      auto ws = open_workspace(g);
      if (ws->telemetry().empty()) throw Error(ErrorCode::kEmptyInput, "no telemetry");
      const auto series = ws->trend(parse_granularity(granularity));
      std::vector<fs::path> images;
      if (creatives_dir.empty()) {
        images = ws->creative_images();
      } else {
        for (const auto& e : fs::directory_iterator(creatives_dir)) {
          auto ext = text::to_lower(e.path().extension().string());
          if (ext == ".png" || ext == ".jpg" || ext == ".jpeg") images.push_back(e.path());
        }
        std::sort(images.begin(), images.end());
      }
      std::vector<EncodedCreative> creatives;
      for (const auto& f : images) creatives.push_back(encode_creative(f));
      const auto prompt = build_analysis_prompt(series, creatives);
      if (!prompt_out.empty()) write_atomic(prompt_out, prompt.text());
      std::optional<Analysis> analysis;
      if (call_model) analysis = analyze_campaign(ws->gateway(), prompt);
      if (fmt == Format::kJson) {
        json sections = json::array();
        for (const auto& [name, body] : prompt.sections) sections.push_back({{"name", name}, {"text", body}});
        json ids = json::array();
        for (const auto& c : creatives) ids.push_back(c.creative_id);
        json out{{"sections", sections}, {"image_payloads", ids}};
        if (analysis) {
          json actions = json::array();
          for (const auto& a : analysis->actions) actions.push_back(to_json(a));
          out["actions"] = actions;
        }
        print_json(out);
      } else if (analysis) {
        std::cout << export_actions(analysis->actions);
      } else {
        std::cout << prompt.text();
      }
    } else if (*h_regions || *h_plan) {
      const auto h = load_heatmap(heatmap_file);
      const auto regions = rank_regions(h, threshold);
      if (*h_regions) {
        if (fmt == Format::kJson) {
          json out = json::array();
          for (const auto& r : regions) out.push_back(to_json(r));
          print_json(out);
        } else {
          std::cout << "region_id,x0,y0,x1,y1,mass,peak,cells\n";
          for (const auto& r : regions) {
            std::cout << r.region_id << "," << r.x0 << "," << r.y0 << "," << r.x1 << "," << r.y1 << ","
                      << numeric::fixed(r.mass, 4) << "," << numeric::fixed(r.peak, 4) << "," << r.cells.size()
                      << "\n";
          }
        }
      } else {
        const auto plan = plan_ablation(regions, load_labels(labels_file), max_variants);
        if (fmt == Format::kJson) {
          json out = json::array();
          for (const auto& v : plan) out.push_back(to_json(v));
          print_json(out);
        } else {
          for (const auto& v : plan) {
            std::cout << v.variant_id << ": remove " << text::join(v.removed_elements, ", ") << "\n";
          }
        }
      }
    } else if (*a_report) {
      const auto originals = read_variant_stats(orig_csv);
      if (originals.size() != 1) {
        throw Error(ErrorCode::kInvalidArgument, "original CSV must hold exactly one row");
      }
      const auto variants = read_variant_stats(variants_csv);
      const auto report = degradation_report(originals.front(), variants);
      if (fmt == Format::kJson) {
        auto out = to_json(report);
        json drops = json::array();
        for (const auto& d : summarize_drops(report)) drops.push_back(to_json(d));
        out["drops"] = drops;
        print_json(out);
      } else {
        std::cout << report_csv(report);
        if (fmt == Format::kText) {
          for (const auto& d : summarize_drops(report)) {
            if (d.metric == "ctr") std::cerr << d.element << ": CTR drop " << d.drop_pct << "%\n";
          }
        }
      }
    } else if (*serve) {
      auto ws = open_workspace(g);
      service::ServiceOptions opts;
      opts.bearer_token = token;
      opts.cors_origin = cors;
      opts.workers = workers;
      opts.call_model_default = load_config(g).provider == llm::ProviderKind::kHttp;
      service::Service svc(*ws, opts);
      std::cerr << "listening on http://" << host << ":" << port << "\n";
      if (!svc.listen(host, port)) {
        std::cerr << "error: cannot listen on " << host << ":" << port << "\n";
        return 1;
      }
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
