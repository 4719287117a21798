"""HTTP transport: FastAPI apps and the threaded server runner."""
