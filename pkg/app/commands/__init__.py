# app/commands/__init__.py
