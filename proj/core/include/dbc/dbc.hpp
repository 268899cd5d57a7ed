#pragma once

#include "dbc/typed_model.hpp"
#include "dbc/generators.hpp"
#include "dbc/remediation.hpp"
#include "dbc/contract.hpp"
#include "dbc/metrics.hpp"
#include "dbc/suite.hpp"
#include "dbc/cli.hpp"
