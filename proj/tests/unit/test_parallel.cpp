#include <algorithm>
#include <atomic>
#include <string>
#include <vector>
#include <numeric>
#include <stdexcept>

#include "cms/parallel.hpp"
#include "doctest.h"

using namespace cms;

TEST_CASE("parallel_for covers every index exactly once") {
  for (std::size_t threads : {1u, 3u, 8u}) {
    set_thread_count(threads);
    CHECK(thread_count() == threads);
    for (std::size_t n : {0u, 1u, 7u, 1000u}) {
      std::vector<int> hits(n, 0);
      parallel_for(n, [&](std::size_t b, std::size_t e) {
        for (std::size_t i = b; i < e; ++i) ++hits[i];
      });
      CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
    }
  }
  set_thread_count(1);
}

TEST_CASE("the lowest failing range wins") {
  set_thread_count(4);
  try {
    parallel_for(100, [](std::size_t b, std::size_t) {
      throw std::runtime_error(std::to_string(b));
    });
    FAIL("expected an exception");
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()) == "0");
  }
  set_thread_count(1);
}
