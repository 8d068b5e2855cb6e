// SPDX-License-Identifier: Apache-2.0
//
// otafl: mixed-precision over-the-air federated learning simulator
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// ------------------------------------------------------------------------

#ifndef OTAFL_ERRORS_HPP
#define OTAFL_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace otafl
{

struct Error : std::runtime_error
{
    using std::runtime_error::runtime_error;
};

// Invalid configuration values (bit widths, scheme strings, config keys).
struct ConfigError : Error
{
    using Error::Error;
};

// NaN or infinite values handed to a numeric routine.
struct NumericInputError : Error
{
    using Error::Error;
};

// Violations of the aggregation protocol: length mismatches, zero-energy pilots.
struct ProtocolError : Error
{
    using Error::Error;
};

// Malformed external files. The message carries the line or byte offset.
struct ParseError : Error
{
    using Error::Error;
};

struct ValidationError : Error
{
    using Error::Error;
};

struct IoError : Error
{
    using Error::Error;
};

// Non-finite loss or gradient during local training.
struct TrainingDivergence : Error
{
    TrainingDivergence(const std::string &what, int round_index = -1, int client = -1)
        : Error(what), round(round_index), client_id(client)
    {
    }
    int round;
    int client_id;
};

} // namespace otafl

#endif
