#pragma once

#include <functional>

#include "secmsg/transport.hpp"

namespace secmsg {

/// Runs `body` once per rank of an n-rank group on 127.0.0.1, one thread per
/// rank. Listeners are bound before any rank starts, so there is no port race.
/// The first exception thrown by any rank is rethrown after all threads join.
void run_local_group(int n, const std::function<void(ProcessGroup&)>& body, GroupOptions options = {});

}  // namespace secmsg
