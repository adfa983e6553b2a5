#pragma once

// Daily discharge client for the USGS NWIS daily-values service.
//
// One request per site, up to `concurrency` in flight. Output rows are
// ordered by site (in the order given) then date. Sites that fail are
// reported in `errors` and left out of the CSV; the others proceed.

#include <atomic>
#include <chrono>
#include <cmath>
#include <ctime>
#include <cstdlib>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "caustream/core/date.hpp"
#include "caustream/core/errors.hpp"
#include "caustream/core/io.hpp"
#include "caustream/core/panel.hpp"
#include "httplib.h"
#include "json.hpp"

namespace caustream::pipeline {

inline constexpr const char* kDefaultNwisEndpoint = "https://waterservices.usgs.gov/nwis/dv/";
inline constexpr const char* kNwisEndpointEnv = "CAUSTREAM_NWIS_ENDPOINT";
inline constexpr const char* kDischargeParameter = "00060";

struct NwisOptions {
  std::string endpoint;  // empty: env override, then the public service
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{500};
  double backoff_factor = 2.0;
  int concurrency = 4;
  std::chrono::seconds timeout{30};
};

struct SiteError {
  std::string site, message;
};

struct SiteProvenance {
  std::string site, parameter_code, retrieved_at, url;
  Index rows = 0;
};

struct NwisResult {
  std::string csv;  // date,station_id,q
  std::vector<SiteProvenance> provenance;
  std::vector<SiteError> errors;
  std::vector<std::string> warnings;
};

inline std::string resolve_endpoint(const NwisOptions& opt) {
  if (!opt.endpoint.empty()) return opt.endpoint;
  if (const char* env = std::getenv(kNwisEndpointEnv); env && *env) return env;
  return kDefaultNwisEndpoint;
}

namespace detail {

struct Url {
  std::string scheme_host;  // e.g. http://127.0.0.1:8080
  std::string path;
};

inline Url split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos) throw InputError("endpoint must include a scheme: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

inline std::string utc_now() {
  const auto now = std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
  const std::time_t t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

struct SiteSeries {
  std::vector<std::pair<std::string, double>> rows;  // (date, discharge)
};

/// Parses the daily-values JSON payload for one site.
inline SiteSeries parse_dv_payload(const std::string& body, const std::string& site) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw LoadError("malformed response for site " + site + ": " + e.what());
  }
  SiteSeries s;
  const auto& ts = j.at("value").at("timeSeries");
  if (ts.empty()) throw LoadError("no discharge series for site " + site);
  std::map<std::string, double> by_date;
  for (const auto& series : ts) {
    for (const auto& block : series.at("values"))
      for (const auto& v : block.at("value")) {
        const std::string date = v.at("dateTime").get<std::string>().substr(0, 10);
        const std::string raw = v.at("value").get<std::string>();
        double q = std::nan("");
        try {
          q = std::stod(raw);
        } catch (const std::logic_error&) {
        }
        // The service marks missing days with a sentinel; keep them empty.
        if (q <= -999999.0) q = std::nan("");
        by_date.emplace(date, q);
      }
  }
  for (auto& [d, q] : by_date) s.rows.emplace_back(d, q);
  return s;
}

}  // namespace detail

/// Fetches daily discharge for each site over [start, end] inclusive.
inline NwisResult fetch_nwis(const std::vector<std::string>& sites, Date start, Date end, const NwisOptions& opt = {}) {
  if (end < start) throw InputError("date range end " + format_date(end) + " is before start " + format_date(start));
  NwisResult res;
  if (sites.empty()) {
    res.warnings.push_back("empty site list; nothing fetched");
    res.csv = "date,station_id,q\n";
    return res;
  }
  const std::string endpoint = resolve_endpoint(opt);
  const auto url = detail::split_url(endpoint);

  struct Slot {
    std::optional<detail::SiteSeries> series;
    std::optional<SiteProvenance> prov;
    std::optional<SiteError> error;
  };
  std::vector<Slot> slots(sites.size());
  std::atomic<std::size_t> next{0};

  auto work = [&] {
    httplib::Client client(url.scheme_host);
    client.set_connection_timeout(opt.timeout);
    client.set_read_timeout(opt.timeout);
    for (std::size_t i = next++; i < sites.size(); i = next++) {
      const std::string& site = sites[i];
      const std::string path = url.path + "?format=json&sites=" + site + "&parameterCd=" + kDischargeParameter +
                               "&startDT=" + format_date(start) + "&endDT=" + format_date(end);
      auto backoff = opt.initial_backoff;
      std::string last_error;
      for (int attempt = 1; attempt <= opt.max_attempts; ++attempt) {
        auto r = client.Get(path);
        if (r && r->status == 200) {
          try {
            slots[i].series = detail::parse_dv_payload(r->body, site);
            SiteProvenance p{site, kDischargeParameter, detail::utc_now(), endpoint + path.substr(url.path.size()),
                             static_cast<Index>(slots[i].series->rows.size())};
            slots[i].prov = p;
          } catch (const std::exception& e) {
            slots[i].error = SiteError{site, e.what()};
          }
          last_error.clear();
          break;
        }
        const bool retryable = !r || r->status == 429 || r->status >= 500;
        last_error = r ? "HTTP " + std::to_string(r->status) : "request failed: " + httplib::to_string(r.error());
        if (!retryable || attempt == opt.max_attempts) break;
        std::this_thread::sleep_for(backoff);
        backoff = std::chrono::milliseconds(static_cast<long>(static_cast<double>(backoff.count()) * opt.backoff_factor));
      }
      if (!last_error.empty()) slots[i].error = SiteError{site, last_error};
    }
  };
  const int workers = std::max(1, std::min<int>(opt.concurrency, static_cast<int>(sites.size())));
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) pool.emplace_back(work);
  for (auto& t : pool) t.join();

  std::ostringstream os;
  os << "date,station_id,q\n";
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (slots[i].error) {
      res.errors.push_back(*slots[i].error);
      continue;
    }
    for (const auto& [d, q] : slots[i].series->rows)
      os << d << ',' << sites[i] << ',' << (std::isnan(q) ? std::string() : io::format_double(q)) << '\n';
    res.provenance.push_back(*slots[i].prov);
  }
  res.csv = os.str();
  return res;
}

inline nlohmann::json provenance_json(const NwisResult& r) {
  nlohmann::json j;
  j["sites"] = nlohmann::json::array();
  for (const auto& p : r.provenance)
    j["sites"].push_back({{"site", p.site}, {"parameter_code", p.parameter_code}, {"retrieved_at", p.retrieved_at},
                          {"url", p.url}, {"rows", p.rows}});
  j["errors"] = nlohmann::json::array();
  for (const auto& e : r.errors) j["errors"].push_back({{"site", e.site}, {"message", e.message}});
  j["warnings"] = r.warnings;
  return j;
}

/// Writes streamflow.csv and its provenance sidecar atomically.
inline void write_nwis(const std::filesystem::path& out_csv, const NwisResult& r) {
  io::write_atomic(out_csv, r.csv);
  auto side = out_csv;
  side += ".provenance.json";
  io::write_atomic(side, provenance_json(r).dump(2) + "\n");
}

}  // namespace caustream::pipeline
