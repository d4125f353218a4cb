#pragma once

#include "streamweave/allocator.hpp"
#include "streamweave/cloud.hpp"
#include "streamweave/config.hpp"
#include "streamweave/edge.hpp"
#include "streamweave/error.hpp"
#include "streamweave/harness.hpp"
#include "streamweave/log.hpp"
#include "streamweave/models.hpp"
#include "streamweave/stats.hpp"
#include "streamweave/transport.hpp"
#include "streamweave/wire.hpp"
