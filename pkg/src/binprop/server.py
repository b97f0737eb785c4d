"""MCP server exposing binprop training and data tools."""

import asyncio
import logging

from mcp.server import Server
from mcp.server.stdio import stdio_server
from mcp.types import Tool

from .config import LOG_LEVEL
from .tools import (
    EVALUATE_CHECKPOINT_TOOL,
    GENERATE_DATASET_TOOL,
    MAKE_FRAME_TOOL,
    SWEEP_TOOL,
    TRAIN_MODEL_TOOL,
    handle_evaluate_checkpoint,
    handle_generate_dataset,
    handle_make_frame,
    handle_sweep,
    handle_train_model,
)


logger = logging.getLogger(__name__)


app = Server("binprop")

HANDLERS = {
    TRAIN_MODEL_TOOL.name: handle_train_model,
    EVALUATE_CHECKPOINT_TOOL.name: handle_evaluate_checkpoint,
    SWEEP_TOOL.name: handle_sweep,
    MAKE_FRAME_TOOL.name: handle_make_frame,
    GENERATE_DATASET_TOOL.name: handle_generate_dataset,
}


@app.list_tools()
async def list_tools() -> list[Tool]:
    """List available tools."""
    return [TRAIN_MODEL_TOOL, EVALUATE_CHECKPOINT_TOOL, SWEEP_TOOL, MAKE_FRAME_TOOL, GENERATE_DATASET_TOOL]


@app.call_tool()
async def call_tool(name: str, arguments: dict):
    """Handle tool calls."""
    handler = HANDLERS.get(name)
    if handler is None:
        raise ValueError(f"Unknown tool: {name}")
    return await handler(arguments)


async def main():
    logger.info("Starting binprop MCP server...")

    async with stdio_server() as (read_stream, write_stream):
        await app.run(
            read_stream,
            write_stream,
            app.create_initialization_options()
        )


def run_stdio():
    """Run the server with stdio transport (synchronous entry point)."""
    logging.basicConfig(level=LOG_LEVEL)
    try:
        asyncio.run(main())
    except KeyboardInterrupt:
        logger.info("Server stopped by user")
    except Exception as e:
        logger.error(f"Server error: {str(e)}")
        raise


if __name__ == "__main__":
    run_stdio()
