"""Subcommands of `fastmap`; every `*Cmd` class here is registered."""
