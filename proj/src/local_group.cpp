#include "secmsg/local_group.hpp"

#include <exception>
#include <mutex>
#include <thread>
#include <vector>

#include "secmsg/error.hpp"

namespace secmsg {

void run_local_group(int n, const std::function<void(ProcessGroup&)>& body, GroupOptions options) {
  if (n < 1) throw ProtocolError("a local group needs at least one rank");
  std::vector<Listener> listeners;
  std::vector<Endpoint> roster;
  for (int r = 0; r < n; ++r) {
    listeners.push_back(Listener::bind(Endpoint{"127.0.0.1", 0}));
    roster.push_back(Endpoint{"127.0.0.1", listeners.back().port()});
  }

  std::mutex mu;
  std::exception_ptr first;
  std::vector<std::thread> threads;
  threads.reserve(static_cast<std::size_t>(n));
  for (int r = 0; r < n; ++r) {
    threads.emplace_back([&, r, l = std::move(listeners[r])]() mutable {
      try {
        ProcessGroup g = ProcessGroup::connect(r, roster, std::move(l), options);
        body(g);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!first) first = std::current_exception();
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first) std::rethrow_exception(first);
}

}  // namespace secmsg
